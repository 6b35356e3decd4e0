use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraMetadata, Intrinsics};
use crate::error::{Error, Result};

const MAX_UNDISTORT_ITERS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthBounds {
    pub near: f64,
    pub far: f64,
}

impl DepthBounds {
    pub fn new(near: f64, far: f64) -> Result<Self> {
        if !(near >= 0.0 && far > near && far.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "depth bounds must satisfy 0 <= near < far, got [{near}, {far}]"
            )));
        }
        Ok(DepthBounds { near, far })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, t_near: f64, t_far: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("ray direction must be nonzero".into()));
        }
        DepthBounds::new(t_near, t_far)?;
        Ok(Ray {
            origin,
            direction: direction / norm,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Radial distortion of normalized image coordinates.
pub fn distort(k: &Intrinsics, x: f64, y: f64) -> (f64, f64) {
    let r2 = x * x + y * y;
    let s = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
    (x * s, y * s)
}

/// Inverts [`distort`] by fixed-point iteration.
pub fn undistort(k: &Intrinsics, xd: f64, yd: f64) -> Option<(f64, f64)> {
    if k.k1 == 0.0 && k.k2 == 0.0 {
        return Some((xd, yd));
    }
    let (mut x, mut y) = (xd, yd);
    for _ in 0..MAX_UNDISTORT_ITERS {
        let r2 = x * x + y * y;
        let s = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
        let (nx, ny) = (xd / s, yd / s);
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        if step < 1e-14 {
            return Some((x, y));
        }
    }
    let (rx, ry) = distort(k, x, y);
    ((rx - xd).abs().max((ry - yd).abs()) < 1e-12).then_some((x, y))
}

/// Projects a world point to continuous pixel coordinates, applying distortion.
pub fn project(meta: &CameraMetadata, p: &Vector3<f64>) -> Option<(f64, f64)> {
    let r = meta.pose.rotation_matrix();
    let c = r * p + Vector3::from(meta.pose.translation);
    if c.z <= 0.0 {
        return None;
    }
    let k = &meta.intrinsics;
    let (xd, yd) = distort(k, c.x / c.z, c.y / c.z);
    Some((k.focal * xd + k.cx, k.focal * yd + k.cy))
}

/// Back-projects continuous pixel `(u, v)` into a world-space ray.
pub fn generate_ray(meta: &CameraMetadata, u: f64, v: f64, bounds: DepthBounds) -> Result<Ray> {
    let k = &meta.intrinsics;
    let (xd, yd) = ((u - k.cx) / k.focal, (v - k.cy) / k.focal);
    let (x, y) = undistort(k, xd, yd).ok_or(Error::DistortionDiverged { u, v })?;
    let dir = meta.pose.camera_to_world_dir(Vector3::new(x, y, 1.0));
    Ray::new(meta.pose.center(), dir, bounds.near, bounds.far)
}

/// Ray through the center of integer pixel `(x, y)`.
pub fn pixel_ray(meta: &CameraMetadata, x: usize, y: usize, bounds: DepthBounds) -> Result<Ray> {
    generate_ray(meta, x as f64 + 0.5, y as f64 + 0.5, bounds)
}
