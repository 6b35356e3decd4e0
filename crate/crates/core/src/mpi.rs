//! Multiplane images extracted from a field, and synthetic defocus over them.
//!
//! Planes are fronto-parallel slabs of the central camera's frustum, evenly
//! spaced in disparity and stored back to front. Each plane holds the
//! straight (not premultiplied) color of its slab together with the slab's
//! opacity, so recompositing every plane reproduces a direct render.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraMetadata;
use crate::error::{Error, Result};
use crate::field::{pixel_ray, render_samples, ColorActivation, DepthBounds, VoxelField};
use crate::image::{ColorSpace, Plane, RgbImage};

/// Depth interval covered by the planes, measured along the optical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "empty frustum: need 0 < near < far, got [{}, {}]",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// `n + 1` slab edges, evenly spaced in disparity from far to near.
    pub fn disparity_edges(&self, n: usize) -> Vec<f64> {
        let (d_far, d_near) = (1.0 / self.far, 1.0 / self.near);
        (0..=n)
            .map(|k| d_far + (d_near - d_far) * k as f64 / n as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpiStack {
    /// Straight color per plane, back to front.
    pub colors: Vec<RgbImage>,
    pub alphas: Vec<Plane>,
    /// Disparity at each slab center, strictly increasing.
    pub disparities: Vec<f64>,
    pub camera: CameraMetadata,
}

impl MpiStack {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color_space(&self) -> ColorSpace {
        self.colors.first().map_or(ColorSpace::CameraRGB, |c| c.color_space)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.colors.len();
        if n == 0 {
            return Err(Error::InvalidParameter("MPI needs at least one plane".into()));
        }
        if self.alphas.len() != n || self.disparities.len() != n {
            return Err(Error::Shape(format!(
                "{n} color planes but {} alpha planes and {} disparities",
                self.alphas.len(),
                self.disparities.len()
            )));
        }
        let (w, h) = (self.colors[0].width, self.colors[0].height);
        for (c, a) in self.colors.iter().zip(&self.alphas) {
            if (c.width, c.height) != (w, h) || (a.width, a.height) != (w, h) {
                return Err(Error::Shape("MPI planes differ in size".into()));
            }
            if a.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter("MPI alpha outside [0, 1]".into()));
            }
        }
        if self.disparities.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::InvalidParameter("MPI disparities must increase back to front".into()));
        }
        Ok(())
    }

    /// Color multiplied by alpha for plane `i`.
    pub fn premultiplied(&self, i: usize) -> RgbImage {
        let alpha = &self.alphas[i];
        let mut out = self.colors[i].clone();
        for (p, a) in out.pixels.iter_mut().zip(&alpha.data) {
            *p = p.map(|v| v * a);
        }
        out
    }

    /// Back-to-front over-composite of every plane.
    pub fn composite(&self) -> RgbImage {
        let (w, h) = (self.colors[0].width, self.colors[0].height);
        let mut out = RgbImage::new(w, h, self.color_space());
        for i in 0..self.len() {
            let c = self.premultiplied(i);
            for ((o, p), a) in out.pixels.iter_mut().zip(&c.pixels).zip(&self.alphas[i].data) {
                *o = [0, 1, 2].map(|k| p[k] + (1.0 - a) * o[k]);
            }
        }
        out
    }
}

/// Slices the central view of `field` into `n_planes` slabs, compositing the
/// samples inside each slab on its own. Each slab gets `samples_per_plane`
/// evenly spaced segments.
pub fn extract_mpi(
    field: &VoxelField,
    camera: &CameraMetadata,
    n_planes: usize,
    range: DepthRange,
    samples_per_plane: usize,
) -> Result<MpiStack> {
    if n_planes == 0 || samples_per_plane == 0 {
        return Err(Error::InvalidParameter("need at least one plane and one sample per plane".into()));
    }
    range.validate()?;
    camera.validate()?;
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let edges = range.disparity_edges(n_planes);
    let forward = camera.pose.forward();

    // Per pixel, back-to-front list of (premultiplied color, alpha).
    let rows = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ray = pixel_ray(camera, x, y, DepthBounds { near: 0.0, far: 1.0 })?;
                    let stretch = 1.0 / ray.direction.dot(&forward);
                    let slabs: Vec<([f64; 3], f64)> = (0..n_planes)
                        .map(|i| {
                            let t_far = stretch / edges[i];
                            let t_near = stretch / edges[i + 1];
                            let step = (t_far - t_near) / samples_per_plane as f64;
                            let b = (0..=samples_per_plane).map(|k| t_near + step * k as f64).collect();
                            let o = render_samples(field, &ray, b);
                            (o.color, o.opacity())
                        })
                        .collect();
                    Ok(slabs)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let space = match field.color_activation {
        ColorActivation::Exp => ColorSpace::CameraRGB,
        ColorActivation::Sigmoid => ColorSpace::Srgb,
    };
    let mut colors = vec![RgbImage::new(w, h, space); n_planes];
    let mut alphas = vec![Plane::new(w, h); n_planes];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, slabs) in row.into_iter().enumerate() {
            for (i, (c, a)) in slabs.into_iter().enumerate() {
                let straight = if a > 0.0 { c.map(|v| v / a) } else { [0.0; 3] };
                colors[i].set(x, y, straight);
                alphas[i].set(x, y, a.clamp(0.0, 1.0));
            }
        }
    }
    Ok(MpiStack {
        colors,
        alphas,
        disparities: edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect(),
        camera: camera.clone(),
    })
}

/// Unit-sum disc of integer offsets within distance `r` of the center.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    pub radius: usize,
    /// Row-major `(2 * radius + 1)^2` taps.
    pub taps: Vec<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        if dx.abs() > r || dy.abs() > r {
            return 0.0;
        }
        self.taps[((dy + r) as usize) * self.size() + (dx + r) as usize]
    }

    /// Zero-padded convolution of `plane` with this kernel.
    pub fn convolve(&self, plane: &Plane) -> Plane {
        if self.radius == 0 {
            return plane.clone();
        }
        let r = self.radius as isize;
        let (w, h) = (plane.width as isize, plane.height as isize);
        let taps: Vec<(isize, isize, f64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .map(|(dx, dy)| (dx, dy, self.at(dx, dy)))
            .filter(|t| t.2 != 0.0)
            .collect();
        let mut out = Plane::new(plane.width, plane.height);
        out.data.par_chunks_mut(plane.width).enumerate().for_each(|(y, row)| {
            let y = y as isize;
            for (x, o) in row.iter_mut().enumerate() {
                let x = x as isize;
                let mut acc = 0.0;
                for &(dx, dy, k) in &taps {
                    let (sx, sy) = (x - dx, y - dy);
                    if sx >= 0 && sx < w && sy >= 0 && sy < h {
                        acc += k * plane.data[(sy * w + sx) as usize];
                    }
                }
                *o = acc;
            }
        });
        out
    }
}

pub fn blur_kernel(r: f64) -> Result<BlurKernel> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("blur radius must be finite and nonnegative, got {r}")));
    }
    let radius = r.floor() as usize;
    let n = 2 * radius + 1;
    let c = radius as f64;
    let mut taps: Vec<f64> = (0..n * n)
        .map(|k| {
            let (dx, dy) = ((k % n) as f64 - c, (k / n) as f64 - c);
            if dx * dx + dy * dy <= r * r {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(BlurKernel { radius, taps })
}

/// Shifts `plane` by `(dx, dy)` pixels with bilinear resampling; samples
/// from outside the image read as zero.
pub fn translate(plane: &Plane, d: [f64; 2]) -> Plane {
    if d == [0.0, 0.0] {
        return plane.clone();
    }
    let (w, h) = (plane.width as isize, plane.height as isize);
    let fetch = |x: isize, y: isize| {
        if x >= 0 && x < w && y >= 0 && y < h {
            plane.data[(y * w + x) as usize]
        } else {
            0.0
        }
    };
    Plane::from_fn(plane.width, plane.height, |x, y| {
        let (sx, sy) = (x as f64 - d[0], y as f64 - d[1]);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        (1.0 - fy) * ((1.0 - fx) * fetch(x0, y0) + fx * fetch(x0 + 1, y0))
            + fy * ((1.0 - fx) * fetch(x0, y0 + 1) + fx * fetch(x0 + 1, y0 + 1))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefocusParams {
    /// Index of the plane that stays sharp.
    pub i_focus: usize,
    /// Blur radius growth in pixels per plane away from focus.
    pub delta_r: f64,
    /// Lateral shift in pixels per plane index.
    #[serde(default)]
    pub delta_d: [f64; 2],
    /// Measure the shift from the focal plane instead of the back plane,
    /// which keeps the in-focus content still.
    #[serde(default)]
    pub recenter: bool,
}

impl DefocusParams {
    pub fn validate(&self, n_planes: usize) -> Result<()> {
        if !(self.delta_r >= 0.0) || !self.delta_r.is_finite() {
            return Err(Error::InvalidParameter(format!("delta_r must be nonnegative, got {}", self.delta_r)));
        }
        if self.i_focus >= n_planes {
            return Err(Error::InvalidParameter(format!(
                "focus plane {} out of range for {n_planes} planes",
                self.i_focus
            )));
        }
        if self.delta_d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("delta_d must be finite".into()));
        }
        Ok(())
    }

    fn shift(&self, i: usize) -> [f64; 2] {
        let k = if self.recenter {
            i as f64 - self.i_focus as f64
        } else {
            i as f64
        };
        self.delta_d.map(|d| d * k)
    }
}

/// Synthetic defocus: every plane's premultiplied color and alpha are
/// blurred by a disc growing with distance from the focal plane, shifted,
/// then composited back to front.
pub fn defocus(mpi: &MpiStack, params: &DefocusParams) -> Result<RgbImage> {
    mpi.validate()?;
    params.validate(mpi.len())?;
    let layers = (0..mpi.len())
        .into_par_iter()
        .map(|i| {
            let kernel = blur_kernel(params.delta_r * (i as f64 - params.i_focus as f64).abs())?;
            let d = params.shift(i);
            let premul = mpi.premultiplied(i);
            let channels = [0, 1, 2].map(|c| translate(&kernel.convolve(&premul.channel(c)), d));
            let alpha = translate(&kernel.convolve(&mpi.alphas[i]), d);
            Ok((channels, alpha))
        })
        .collect::<Result<Vec<_>>>()?;

    let (w, h) = (mpi.colors[0].width, mpi.colors[0].height);
    let mut out = RgbImage::new(w, h, mpi.color_space());
    for (channels, alpha) in &layers {
        for (k, o) in out.pixels.iter_mut().enumerate() {
            let a = alpha.data[k];
            *o = [0, 1, 2].map(|c| channels[c].data[k] + (1.0 - a) * o[c]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpiManifest {
    pub disparities: Vec<f64>,
    pub color_space: ColorSpace,
    pub camera: CameraMetadata,
    pub colors: Vec<PathBuf>,
    pub alphas: Vec<PathBuf>,
}

pub const MPI_MANIFEST: &str = "mpi.json";

impl MpiStack {
    /// Writes one color and one alpha PFM per plane plus `mpi.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = MpiManifest {
            disparities: self.disparities.clone(),
            color_space: self.color_space(),
            camera: self.camera.clone(),
            colors: Vec::new(),
            alphas: Vec::new(),
        };
        for i in 0..self.len() {
            let color = PathBuf::from(format!("color_{i:03}.pfm"));
            let alpha = PathBuf::from(format!("alpha_{i:03}.pfm"));
            self.colors[i].write_pfm(dir.join(&color))?;
            self.alphas[i].write_pfm(dir.join(&alpha))?;
            manifest.colors.push(color);
            manifest.alphas.push(alpha);
        }
        let path = dir.join(MPI_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MPI_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: MpiManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let colors = m
            .colors
            .iter()
            .map(|p| RgbImage::read_pfm(dir.join(p), m.color_space))
            .collect::<Result<Vec<_>>>()?;
        let alphas = m
            .alphas
            .iter()
            .map(|p| Ok(Plane::read_pfm(dir.join(p))?.map(|a| a.clamp(0.0, 1.0))))
            .collect::<Result<Vec<_>>>()?;
        let stack = MpiStack {
            colors,
            alphas,
            disparities: m.disparities,
            camera: m.camera,
        };
        stack.validate()?;
        Ok(stack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use crate::field::{render_ray, Aabb};
    use crate::metrics::psnr_rgb;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn camera(size: usize) -> CameraMetadata {
        CameraMetadata {
            white_level: 4095,
            black_level: 528,
            wb_gains: [1.0; 3],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            shutter: 1.0,
            iso: 100.0,
            pose: Pose::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)),
            intrinsics: Intrinsics::pinhole(size, size, size as f64 * 1.2),
        }
    }

    /// A soft blob whose density and color vary slowly in space.
    fn blob() -> VoxelField {
        let mut f = VoxelField::new([24; 3], Aabb::cube(1.0), 1e-6, [0.5; 3]).unwrap();
        let n = 24;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = f.node_position(i, j, k);
                    let r2 = p.norm_squared();
                    let idx = f.index(i, j, k);
                    f.params[idx][0] = crate::field::softplus_inverse(4.0 * (-3.0 * r2).exp() + 1e-6);
                    let c = [0.3 + 0.2 * p.x, 0.5 + 0.1 * p.y, 0.2 + 0.15 * p.z];
                    for ch in 0..3 {
                        f.params[idx][ch + 1] = c[ch].ln();
                    }
                }
            }
        }
        f
    }

    fn range() -> DepthRange {
        DepthRange { near: 1.5, far: 4.5 }
    }

    #[test]
    fn kernels() {
        assert_eq!(blur_kernel(0.0).unwrap().taps, vec![1.0]);
        let k = blur_kernel(1.0).unwrap();
        let expect = [0.0, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0, 0.2, 0.0];
        for (a, b) in k.taps.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(blur_kernel(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn kernel_is_unit_sum_symmetric_and_nonnegative(r in 0.0f64..12.0) {
            let k = blur_kernel(r).unwrap();
            prop_assert!((k.taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(k.taps.iter().all(|&t| t >= 0.0));
            let m = k.radius as isize;
            for dy in -m..=m {
                for dx in -m..=m {
                    prop_assert_eq!(k.at(dx, dy), k.at(-dx, -dy));
                }
            }
        }
    }

    #[test]
    fn single_plane_matches_a_full_render() {
        let f = blob();
        let cam = camera(8);
        let mpi = extract_mpi(&f, &cam, 1, range(), 48).unwrap();
        let forward = cam.pose.forward();
        for (x, y) in [(0, 0), (3, 4), (7, 2)] {
            let ray = pixel_ray(&cam, x, y, DepthBounds { near: 0.0, far: 1.0 }).unwrap();
            let s = 1.0 / ray.direction.dot(&forward);
            let ray = crate::field::Ray {
                t_near: range().near * s,
                t_far: range().far * s,
                ..ray
            };
            let o = render_ray::<rand_chacha::ChaCha8Rng>(&f, &ray, 48, None).unwrap();
            let c = mpi.premultiplied(0).get(x, y);
            for k in 0..3 {
                assert!((c[k] - o.color[k]).abs() < 1e-12);
            }
            assert!((mpi.alphas[0].get(x, y) - o.opacity()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_field_and_bad_ranges() {
        let mut empty = VoxelField::new([4; 3], Aabb::cube(1.0), 1.0, [0.5; 3]).unwrap();
        empty.params.iter_mut().for_each(|p| p[0] = -1e3);
        let mpi = extract_mpi(&empty, &camera(6), 4, range(), 4).unwrap();
        assert!(mpi.alphas.iter().all(|a| a.data.iter().all(|&v| v < 1e-12)));
        for bad in [DepthRange { near: 0.0, far: 1.0 }, DepthRange { near: 2.0, far: 2.0 }] {
            assert!(extract_mpi(&empty, &camera(6), 4, bad, 4).is_err());
        }
    }

    #[test]
    fn recomposited_planes_match_the_direct_render() {
        let f = blob();
        let cam = camera(64);
        let mpi = extract_mpi(&f, &cam, 32, range(), 8).unwrap();
        assert!(mpi.disparities.windows(2).all(|d| d[1] > d[0]));
        let direct = crate::field::render_view(&f, &cam, 256).unwrap().color;
        let psnr = psnr_rgb(&direct, &mpi.composite()).unwrap();
        assert!(psnr > 40.0, "{psnr}");
    }

    fn single_plane(width: usize, alpha: f64, color: [f64; 3], spot: Option<(usize, usize)>) -> MpiStack {
        let mut c = RgbImage::new(width, width, ColorSpace::CameraRGB);
        let mut a = Plane::new(width, width);
        for y in 0..width {
            for x in 0..width {
                if spot.is_none_or(|s| s == (x, y)) {
                    c.set(x, y, color);
                    a.set(x, y, alpha);
                }
            }
        }
        MpiStack {
            colors: vec![c],
            alphas: vec![a],
            disparities: vec![0.5],
            camera: camera(width),
        }
    }

    #[test]
    fn identity_parameters_give_the_plain_composite() {
        let f = blob();
        let mpi = extract_mpi(&f, &camera(16), 6, range(), 4).unwrap();
        let p = DefocusParams {
            i_focus: 2,
            delta_r: 0.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        };
        assert_eq!(defocus(&mpi, &p).unwrap(), mpi.composite());
    }

    #[test]
    fn in_focus_opaque_plane_is_unchanged() {
        let mut mpi = single_plane(12, 1.0, [0.0; 3], None);
        mpi.colors[0] = RgbImage::from_fn(12, 12, ColorSpace::CameraRGB, |x, y| [x as f64, y as f64, 0.5]);
        let p = DefocusParams {
            i_focus: 0,
            delta_r: 5.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        };
        assert_eq!(defocus(&mpi, &p).unwrap(), mpi.colors[0]);
    }

    #[test]
    fn off_focus_blur_conserves_energy() {
        let mut mpi = single_plane(40, 1.0, [2.0, 1.0, 0.5], Some((20, 20)));
        mpi.colors.insert(0, RgbImage::new(40, 40, ColorSpace::CameraRGB));
        mpi.alphas.insert(0, Plane::new(40, 40));
        mpi.disparities = vec![0.25, 0.5];
        let p = DefocusParams {
            i_focus: 0,
            delta_r: 4.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        };
        let out = defocus(&mpi, &p).unwrap();
        let total: f64 = out.pixels.iter().map(|p| p[0]).sum();
        assert!((total - 2.0).abs() < 1e-5, "{total}");
        // The disc spreads the point evenly over its taps.
        let taps = blur_kernel(4.0).unwrap().taps.iter().filter(|&&t| t > 0.0).count() as f64;
        assert!((out.get(20, 20)[0] - 2.0 / taps).abs() < 1e-12);
        assert!((out.get(24, 20)[0] - 2.0 / taps).abs() < 1e-12);
        assert_eq!(out.get(25, 20)[0], 0.0);
    }

    #[test]
    fn hdr_bokeh_saturates_where_clipped_input_cannot() {
        let intensity = 500.0;
        let hdr = single_plane(40, 1.0, [intensity; 3], Some((20, 20)));
        let ldr = single_plane(40, 1.0, [1.0; 3], Some((20, 20)));
        let p = DefocusParams {
            i_focus: 1,
            delta_r: 3.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        };
        let stack = |mut m: MpiStack| {
            m.colors.push(RgbImage::new(40, 40, ColorSpace::CameraRGB));
            m.alphas.push(Plane::new(40, 40));
            m.disparities.push(0.75);
            m
        };
        let taps = blur_kernel(3.0).unwrap().taps.iter().filter(|&&t| t > 0.0).count() as f64;
        let a = defocus(&stack(hdr), &p).unwrap();
        let b = defocus(&stack(ldr), &p).unwrap();
        for (x, y) in [(20, 20), (22, 21), (17, 20)] {
            assert!((a.get(x, y)[0] - intensity / taps).abs() < 1e-9);
            assert!(a.get(x, y)[0].min(1.0) == 1.0);
            assert!(b.get(x, y)[0] <= 1.0 / taps + 1e-12);
        }
    }

    #[test]
    fn splitting_a_plane_leaves_the_composite_unchanged() {
        let base = single_plane(8, 0.6, [0.3, 0.7, 1.4], None);
        // (1 - 0.6) = (1 - a1)(1 - a2) with a1 = a2.
        let a = 1.0 - 0.4f64.sqrt();
        let front_premul = [0.1, 0.2, 0.3];
        let back_premul = [0, 1, 2].map(|k| (0.6 * base.colors[0].pixels[0][k] - front_premul[k]) / (1.0 - a));
        let plane = |premul: [f64; 3]| RgbImage::from_fn(8, 8, ColorSpace::CameraRGB, |_, _| premul.map(|v| v / a));
        let split = MpiStack {
            colors: vec![plane(back_premul), plane(front_premul)],
            alphas: vec![Plane::filled(8, 8, a), Plane::filled(8, 8, a)],
            disparities: vec![0.4, 0.41],
            camera: base.camera.clone(),
        };
        let p = DefocusParams {
            i_focus: 0,
            delta_r: 0.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        };
        let p1 = defocus(&base, &p).unwrap();
        let p2 = defocus(&split, &p).unwrap();
        for (u, v) in p1.pixels.iter().flatten().zip(p2.pixels.iter().flatten()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_moves_content_and_recentering_pins_focus() {
        let img = Plane::from_fn(10, 10, |x, y| if (x, y) == (4, 4) { 1.0 } else { 0.0 });
        let t = translate(&img, [2.0, 1.0]);
        assert_eq!(t.get(6, 5), 1.0);
        let half = translate(&img, [0.5, 0.0]);
        assert!((half.get(4, 4) - 0.5).abs() < 1e-12 && (half.get(5, 4) - 0.5).abs() < 1e-12);

        let p = DefocusParams {
            i_focus: 2,
            delta_r: 0.0,
            delta_d: [1.0, 0.0],
            recenter: true,
        };
        assert_eq!(p.shift(2), [0.0, 0.0]);
        assert_eq!(p.shift(0), [-2.0, 0.0]);
        assert!(p.validate(2).is_err());
    }

    #[test]
    fn stack_round_trips_through_disk() {
        let mpi = extract_mpi(&blob(), &camera(8), 3, range(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        mpi.save(dir.path()).unwrap();
        let back = MpiStack::load(dir.path()).unwrap();
        assert_eq!(back.camera, mpi.camera);
        assert_eq!(back.disparities, mpi.disparities);
        for (a, b) in back.alphas.iter().zip(&mpi.alphas) {
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }
}
