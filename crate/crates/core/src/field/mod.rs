//! Dense voxel radiance field with trilinear interpolation.
//!
//! Each grid node stores four raw parameters: one density logit and three
//! log-colors. Interpolation happens on the raw values; activations
//! (softplus for density, exp or sigmoid for color) are applied afterwards.

mod checkpoint;
mod ray;
mod render;
mod view;

pub use checkpoint::{Container, ArrayEntry};
pub use ray::{distort, generate_ray, pixel_ray, project, undistort, DepthBounds, Ray};
pub use render::{
    render_ray, render_samples, stratified_boundaries, weight_variance, weight_variance_grad,
    RaySampleSet, RayTape, RenderOutput, VarianceMode,
};
pub use view::{clipped_pixel_ray, render_view, ViewRender};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn cube(half: f64) -> Self {
        Aabb {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    /// Slab test; returns the parameter interval where the ray is inside.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut lo, mut hi) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0.max(0.0)).then(|| (t0.max(0.0), t1))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorActivation {
    /// Linear HDR radiance, unbounded above.
    #[default]
    Exp,
    /// Bounded [0, 1] output for display-referred training.
    Sigmoid,
}

impl ColorActivation {
    #[inline]
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            ColorActivation::Exp => raw.exp(),
            ColorActivation::Sigmoid => sigmoid(raw),
        }
    }

    /// Derivative with respect to the raw value, given the activated value.
    #[inline]
    pub fn derivative(self, activated: f64) -> f64 {
        match self {
            ColorActivation::Exp => activated,
            ColorActivation::Sigmoid => activated * (1.0 - activated),
        }
    }

    pub fn inverse(self, value: f64) -> f64 {
        match self {
            ColorActivation::Exp => value.ln(),
            ColorActivation::Sigmoid => (value / (1.0 - value)).ln(),
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Corner indices and weights of one trilinear lookup.
#[derive(Clone, Copy, Debug)]
pub struct Trilinear {
    pub nodes: [u32; 8],
    pub weights: [f64; 8],
}

/// One raw parameter quadruple per node: `[density, red, green, blue]`.
pub type NodeParams = [f64; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelField {
    pub resolution: [usize; 3],
    pub bbox: Aabb,
    pub params: Vec<NodeParams>,
    pub color_activation: ColorActivation,
}

impl VoxelField {
    pub fn new(resolution: [usize; 3], bbox: Aabb, density: f64, color: [f64; 3]) -> Result<Self> {
        Self::with_activation(resolution, bbox, density, color, ColorActivation::Exp)
    }

    /// Uniform field whose every node activates to `density` and `color`.
    pub fn with_activation(
        resolution: [usize; 3],
        bbox: Aabb,
        density: f64,
        color: [f64; 3],
        color_activation: ColorActivation,
    ) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 nodes per axis, got {resolution:?}"
            )));
        }
        let e = bbox.extent();
        if e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(format!("degenerate bounding box {bbox:?}")));
        }
        let node = [
            softplus_inverse(density),
            color_activation.inverse(color[0]),
            color_activation.inverse(color[1]),
            color_activation.inverse(color[2]),
        ];
        if node.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "initial density {density} / color {color:?} not representable"
            )));
        }
        Ok(VoxelField {
            resolution,
            bbox,
            params: vec![node; resolution.iter().product()],
            color_activation,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    /// World position of node `(i, j, k)`.
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let e = self.bbox.extent();
        let ijk = [i, j, k];
        Vector3::from_fn(|a, _| {
            self.bbox.min[a] + e[a] * ijk[a] as f64 / (self.resolution[a] - 1) as f64
        })
    }

    /// Voxel edge length along the shortest axis.
    pub fn voxel_size(&self) -> f64 {
        let e = self.bbox.extent();
        (0..3)
            .map(|a| e[a] / (self.resolution[a] - 1) as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
    }

    /// Trilinear corners for `p`, or `None` outside the box.
    #[inline]
    pub fn locate(&self, p: &Vector3<f64>) -> Option<Trilinear> {
        let e = self.bbox.extent();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let u = (p[a] - self.bbox.min[a]) / e[a] * (n - 1) as f64;
            if !(u >= 0.0 && u <= (n - 1) as f64) {
                return None;
            }
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let (nx, nxy) = (self.resolution[0], self.resolution[0] * self.resolution[1]);
        let origin = base[2] * nxy + base[1] * nx + base[0];
        let mut nodes = [0u32; 8];
        let mut weights = [0.0; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            nodes[c] = (origin + dz * nxy + dy * nx + dx) as u32;
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
        }
        Some(Trilinear { nodes, weights })
    }

    /// Interpolated raw parameters.
    #[inline]
    pub fn interpolate(&self, t: &Trilinear) -> NodeParams {
        let mut out = [0.0; 4];
        for c in 0..8 {
            let p = &self.params[t.nodes[c] as usize];
            let w = t.weights[c];
            for k in 0..4 {
                out[k] += w * p[k];
            }
        }
        out
    }

    /// Density and color at a world point; zero density outside the box.
    pub fn sample(&self, p: &Vector3<f64>) -> (f64, [f64; 3]) {
        match self.locate(p) {
            None => (0.0, [0.0; 3]),
            Some(t) => {
                let raw = self.interpolate(&t);
                let act = self.color_activation;
                (
                    softplus(raw[0]),
                    [act.apply(raw[1]), act.apply(raw[2]), act.apply(raw[3])],
                )
            }
        }
    }
}

/// Gradient buffer with the same layout as [`VoxelField::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad {
    pub params: Vec<NodeParams>,
}

impl FieldGrad {
    pub fn zeros_like(field: &VoxelField) -> Self {
        FieldGrad {
            params: vec![[0.0; 4]; field.len()],
        }
    }

    pub fn clear(&mut self) {
        self.params.iter_mut().for_each(|g| *g = [0.0; 4]);
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().flatten().map(|g| g * g).sum()
    }
}

/// Receives per-node gradient contributions from a backward pass.
pub trait GradSink {
    fn add(&mut self, node: u32, grad: NodeParams);
}

impl GradSink for FieldGrad {
    #[inline]
    fn add(&mut self, node: u32, grad: NodeParams) {
        let g = &mut self.params[node as usize];
        for k in 0..4 {
            g[k] += grad[k];
        }
    }
}

/// Ordered list of contributions, applied later in a fixed order.
impl GradSink for Vec<(u32, NodeParams)> {
    #[inline]
    fn add(&mut self, node: u32, grad: NodeParams) {
        self.push((node, grad));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> VoxelField {
        let mut f = VoxelField::new([3, 3, 3], Aabb::cube(1.0), 0.5, [0.5; 3]).unwrap();
        for (i, p) in f.params.iter_mut().enumerate() {
            *p = [i as f64 * 0.1 - 1.0, (i % 5) as f64 * 0.2 - 0.5, -(i as f64) * 0.05, 0.3];
        }
        f
    }

    #[test]
    fn node_lookup_is_exact() {
        let f = field();
        let idx = f.index(1, 2, 0);
        let p = f.node_position(1, 2, 0);
        let (s, c) = f.sample(&p);
        let raw = f.params[idx];
        assert!((s - softplus(raw[0])).abs() < 1e-12);
        for k in 0..3 {
            assert!((c[k] - raw[k + 1].exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_field_is_constant() {
        let f = VoxelField::new([4, 5, 6], Aabb::cube(2.0), 3.0, [0.2, 1.5, 40.0]).unwrap();
        for p in [
            Vector3::new(0.1, -0.3, 1.9),
            Vector3::new(-2.0, 2.0, 0.0),
            Vector3::new(0.77, 0.0, -1.1),
        ] {
            let (s, c) = f.sample(&p);
            assert!((s - 3.0).abs() < 1e-12);
            assert!((c[0] - 0.2).abs() < 1e-12 && (c[1] - 1.5).abs() < 1e-12 && (c[2] - 40.0).abs() < 1e-9);
        }
        assert_eq!(f.sample(&Vector3::new(2.1, 0.0, 0.0)).0, 0.0);
    }

    #[test]
    fn midpoint_activates_average_raw() {
        let f = field();
        let a = f.index(0, 1, 1);
        let b = f.index(1, 1, 1);
        let p = (f.node_position(0, 1, 1) + f.node_position(1, 1, 1)) * 0.5;
        let (s, c) = f.sample(&p);
        let avg = |k: usize| 0.5 * (f.params[a][k] + f.params[b][k]);
        assert!((s - softplus(avg(0))).abs() < 1e-12);
        assert!((c[1] - avg(2).exp()).abs() < 1e-12);
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.1, 1.0, 20.0, 100.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn ray_box_intersection() {
        let b = Aabb::cube(1.0);
        let (t0, t1) = b
            .intersect(&Vector3::new(0.0, 0.0, -3.0), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 4.0).abs() < 1e-12);
        assert!(b
            .intersect(&Vector3::new(0.0, 2.0, -3.0), &Vector3::new(0.0, 0.0, 1.0))
            .is_none());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(VoxelField::new([1, 4, 4], Aabb::cube(1.0), 0.1, [0.5; 3]).is_err());
        assert!(VoxelField::new([2, 2, 2], Aabb { min: [0.0; 3], max: [0.0, 1.0, 1.0] }, 0.1, [0.5; 3]).is_err());
    }
}
