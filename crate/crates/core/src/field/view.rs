use rayon::prelude::*;

use super::{pixel_ray, render_samples, stratified_boundaries, Aabb, ColorActivation, DepthBounds, Ray, VoxelField};
use crate::camera::CameraMetadata;
use crate::error::Result;
use crate::image::{ColorSpace, Plane, RgbImage};

/// Ray through the center of pixel `(x, y)` clipped to `bbox`, or `None`
/// when it misses the box.
pub fn clipped_pixel_ray(meta: &CameraMetadata, x: usize, y: usize, bbox: &Aabb) -> Result<Option<Ray>> {
    let probe = pixel_ray(meta, x, y, DepthBounds { near: 0.0, far: 1.0 })?;
    Ok(bbox
        .intersect(&probe.origin, &probe.direction)
        .map(|(near, far)| (near.max(0.0), far))
        .filter(|(near, far)| far - near > 1e-9)
        .map(|(t_near, t_far)| Ray {
            t_near,
            t_far,
            ..probe
        }))
}

/// A rendered view: color plus accumulated opacity per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRender {
    pub color: RgbImage,
    pub opacity: Plane,
}

/// Renders every pixel of `meta`'s image with evenly spaced midpoint samples.
/// Exp-activated fields produce camera-space HDR, sigmoid ones display sRGB.
pub fn render_view(field: &VoxelField, meta: &CameraMetadata, samples_per_ray: usize) -> Result<ViewRender> {
    let (w, h) = (meta.intrinsics.width, meta.intrinsics.height);
    let rows: Vec<Result<Vec<([f64; 3], f64)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    Ok(match clipped_pixel_ray(meta, x, y, &field.bbox)? {
                        Some(r) => {
                            let b = stratified_boundaries::<rand_chacha::ChaCha8Rng>(
                                r.t_near,
                                r.t_far,
                                samples_per_ray,
                                None,
                            );
                            let o = render_samples(field, &r, b);
                            (o.color, o.opacity())
                        }
                        None => ([0.0; 3], 0.0),
                    })
                })
                .collect()
        })
        .collect();
    let space = match field.color_activation {
        ColorActivation::Exp => ColorSpace::CameraRGB,
        ColorActivation::Sigmoid => ColorSpace::Srgb,
    };
    let mut color = RgbImage::new(w, h, space);
    let mut opacity = Plane::new(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, a)) in row?.into_iter().enumerate() {
            color.set(x, y, c);
            opacity.set(x, y, a);
        }
    }
    Ok(ViewRender { color, opacity })
}
