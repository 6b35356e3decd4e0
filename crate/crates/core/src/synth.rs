//! Procedural HDR scenes and raw training sets synthesized from them.
//!
//! A scene is a handful of emissive boxes and spheres baked into a voxel
//! field. Clean views of that field are scaled by shutter time, run
//! backwards through the camera pipeline into a Bayer mosaic, optionally
//! miscalibrated, and finally corrupted with signal-dependent noise.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{BayerPattern, CameraMetadata, Intrinsics, MetadataSidecar, Pose};
use crate::error::{Error, Result};
use crate::field::{render_view, softplus_inverse, Aabb, VoxelField};
use crate::image::{ColorSpace, Plane, RgbImage};
use crate::noise::{apply_miscalibration, sample_noise, MiscalibrationTable, NoiseParams};
use crate::pipeline::{unprocess, unprocess_rgb, RawImage};

pub const BLACK_LEVEL: u32 = 528;
pub const WHITE_LEVEL: u32 = 4095;
pub const WB_GAINS: [f64; 3] = [0.5, 1.0, 0.6];
/// XYZ to camera matrix of a typical consumer sensor.
pub const GENERIC_CCM: [[f64; 3]; 3] = [
    [0.6722, -0.0635, -0.0963],
    [-0.4287, 1.2460, 0.2028],
    [-0.0908, 0.2162, 0.5668],
];
/// Density assigned to nodes outside every primitive.
const EMPTY_DENSITY: f64 = 1e-8;
/// Opacity above which a test pixel counts as foreground.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    /// Signed distance, negative inside. Exact for spheres, a good
    /// approximation for boxes.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - Vector3::from(*center)).norm() - radius,
            Shape::Box { min, max } => {
                let mut outside = 0.0f64;
                let mut inside = f64::NEG_INFINITY;
                for a in 0..3 {
                    let c = 0.5 * (min[a] + max[a]);
                    let h = 0.5 * (max[a] - min[a]);
                    let d = (p[a] - c).abs() - h;
                    outside += d.max(0.0).powi(2);
                    inside = inside.max(d);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
        }
    }

    fn bounds(&self) -> Aabb {
        match self {
            Shape::Box { min, max } => Aabb { min: *min, max: *max },
            Shape::Sphere { center, radius } => Aabb {
                min: center.map(|c| c - radius),
                max: center.map(|c| c + radius),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Box { min, max } => (0..3).all(|a| max[a] > min[a]),
            Shape::Sphere { radius, .. } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate primitive {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// Linear HDR emitted color.
    pub color: [f64; 3],
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_density() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PoseSampler {
    /// Evenly spaced on a horizontal circle, all looking at the box center.
    Ring { radius: f64, height: f64 },
    /// Spiral over the upper hemisphere.
    Hemisphere { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShutterEntry {
    pub time: f64,
    /// Skip noise injection; models an infinitely long exposure.
    #[serde(default)]
    pub noiseless: bool,
}

impl ShutterEntry {
    pub fn noisy(time: f64) -> Self {
        ShutterEntry { time, noiseless: false }
    }

    pub fn clean(time: f64) -> Self {
        ShutterEntry { time, noiseless: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub bbox: Aabb,
    pub resolution: [usize; 3],
    pub n_train: usize,
    pub n_test: usize,
    pub poses: PoseSampler,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Training image `k` uses `shutters[k % shutters.len()]`.
    pub shutters: Vec<ShutterEntry>,
    /// Capture each pose once per shutter, like an exposure bracket, instead
    /// of giving every training image its own pose.
    pub bracketed: bool,
    /// Sensor noise, shared by every noisy shutter.
    pub noise: NoiseParams,
    pub miscalibration: Option<MiscalibrationTable>,
    pub bayer_pattern: BayerPattern,
    /// When false, training captures keep all three camera channels at every
    /// pixel instead of being sampled through the color filter array.
    pub mosaic: bool,
    pub render_samples: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            primitives: desk_primitives(),
            bbox: Aabb::cube(1.0),
            resolution: [64; 3],
            n_train: 20,
            n_test: 5,
            poses: PoseSampler::Ring {
                radius: 3.2,
                height: 1.2,
            },
            width: 64,
            height: 64,
            focal: 80.0,
            shutters: vec![ShutterEntry::clean(1.0)],
            bracketed: false,
            noise: NoiseParams { shot: 1e-3, read: 1e-5 },
            miscalibration: None,
            bayer_pattern: BayerPattern::RGGB,
            mosaic: true,
            render_samples: 96,
        }
    }
}

/// A small still life: a floor slab, two diffuse-looking solids, a dim
/// block and a bright lamp.
pub fn desk_primitives() -> Vec<Primitive> {
    let p = |shape, color| Primitive {
        shape,
        color,
        density: default_density(),
    };
    vec![
        p(
            Shape::Box {
                min: [-0.9, -0.9, -0.9],
                max: [0.9, -0.6, 0.9],
            },
            [0.16, 0.15, 0.13],
        ),
        p(
            Shape::Sphere {
                center: [0.35, -0.25, 0.2],
                radius: 0.35,
            },
            [0.45, 0.22, 0.12],
        ),
        p(
            Shape::Box {
                min: [-0.65, -0.6, -0.55],
                max: [-0.1, 0.15, 0.0],
            },
            [0.1, 0.2, 0.32],
        ),
        p(
            Shape::Box {
                min: [0.1, -0.6, -0.7],
                max: [0.6, -0.35, -0.3],
            },
            [0.0007, 0.0006, 0.0005],
        ),
        p(
            Shape::Sphere {
                center: [-0.3, 0.45, 0.35],
                radius: 0.18,
            },
            [0.8, 0.75, 0.6],
        ),
    ]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.primitives.is_empty() {
            return bad("scene has no primitives".into());
        }
        for p in &self.primitives {
            p.shape.validate()?;
            if p.color.iter().any(|&c| !(c > 0.0)) || !(p.density > 0.0) {
                return bad(format!("primitive color and density must be positive: {p:?}"));
            }
            let b = p.shape.bounds();
            if (0..3).any(|a| b.max[a] <= self.bbox.min[a] || b.min[a] >= self.bbox.max[a]) {
                return bad(format!("primitive lies outside the scene box: {p:?}"));
            }
        }
        if self.n_train == 0 {
            return bad("need at least one training view".into());
        }
        if self.width == 0 || self.height == 0 || self.width % 2 != 0 || self.height % 2 != 0 {
            return bad(format!("image size must be even, got {}x{}", self.width, self.height));
        }
        if !(self.focal > 0.0) || self.render_samples == 0 {
            return bad("focal length and render samples must be positive".into());
        }
        if self.shutters.is_empty() || self.shutters.iter().any(|s| !(s.time > 0.0)) {
            return bad("shutter grid must be nonempty with positive times".into());
        }
        self.noise.validate()?;
        if let Some(t) = &self.miscalibration {
            t.validate()?;
            for s in &self.shutters {
                t.alpha(s.time)?;
            }
        }
        Ok(())
    }

    /// Ratio between the brightest and dimmest nonzero primitive channel.
    pub fn dynamic_range(&self) -> f64 {
        let values = self.primitives.iter().flat_map(|p| p.color);
        let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            if v > 0.0 {
                (lo.min(v), hi.max(v))
            } else {
                (lo, hi)
            }
        });
        if hi > 0.0 {
            hi / lo
        } else {
            0.0
        }
    }

    pub fn longest_shutter(&self) -> f64 {
        self.shutters.iter().map(|s| s.time).fold(0.0, f64::max)
    }

    fn camera(&self, pose: Pose, shutter: f64) -> CameraMetadata {
        CameraMetadata {
            white_level: WHITE_LEVEL,
            black_level: BLACK_LEVEL,
            wb_gains: WB_GAINS,
            ccm: GENERIC_CCM,
            shutter,
            iso: 100.0,
            pose,
            intrinsics: Intrinsics::pinhole(self.width, self.height, self.focal),
        }
    }

    /// `count` poses; `offset` in [0, 1) shifts ring angles by that fraction of a step.
    pub fn sample_poses(&self, count: usize, offset: f64) -> Vec<Pose> {
        let center = self.bbox.center();
        let up = Vector3::new(0.0, 1.0, 0.0);
        (0..count)
            .map(|k| {
                let eye = match self.poses {
                    PoseSampler::Ring { radius, height } => {
                        let theta = std::f64::consts::TAU * (k as f64 + offset) / count as f64;
                        center + Vector3::new(radius * theta.cos(), height, radius * theta.sin())
                    }
                    PoseSampler::Hemisphere { radius } => {
                        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                        let z = 0.1 + 0.8 * (k as f64 + 0.5 + offset) / count as f64;
                        let r = (1.0 - z * z).sqrt();
                        let theta = golden * k as f64;
                        center + radius * Vector3::new(r * theta.cos(), z, r * theta.sin())
                    }
                };
                Pose::look_at(eye, center, up)
            })
            .collect()
    }
}

/// Rasterizes the primitives into an exp-activated voxel grid. Density ramps
/// across one voxel at each surface; nodes take the color of the nearest
/// primitive so interpolation never blends toward black.
pub fn bake_scene(spec: &SceneSpec) -> Result<VoxelField> {
    let mut field = VoxelField::new(spec.resolution, spec.bbox, EMPTY_DENSITY, [1.0; 3])?;
    let soft = field.voxel_size();
    let [nx, ny, _] = spec.resolution;
    let positions: Vec<Vector3<f64>> = (0..field.len())
        .map(|n| field.node_position(n % nx, (n / nx) % ny, n / (nx * ny)))
        .collect();
    field.params.par_iter_mut().zip(&positions).for_each(|(node, p)| {
        let mut sigma = EMPTY_DENSITY;
        let mut nearest = (f64::INFINITY, [1.0; 3]);
        for prim in &spec.primitives {
            let d = prim.shape.signed_distance(p);
            let occupancy = (0.5 - d / soft).clamp(0.0, 1.0);
            sigma += prim.density * occupancy;
            if d < nearest.0 {
                nearest = (d, prim.color);
            }
        }
        node[0] = softplus_inverse(sigma);
        for c in 0..3 {
            node[1 + c] = nearest.1[c].ln();
        }
    });
    Ok(field)
}

/// Held-out view with clean linear HDR ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TestView {
    pub meta: CameraMetadata,
    pub hdr: RgbImage,
    pub mask: Plane,
}

/// One linear training capture.
#[derive(Clone, Debug, PartialEq)]
pub enum Capture {
    Mosaic(RawImage),
    /// Camera RGB with no color filter array.
    Full { image: RgbImage, meta: CameraMetadata },
}

impl Capture {
    pub fn meta(&self) -> &CameraMetadata {
        match self {
            Capture::Mosaic(raw) => &raw.meta,
            Capture::Full { meta, .. } => meta,
        }
    }

    /// Mean linear value over every stored sample.
    pub fn mean(&self) -> f64 {
        match self {
            Capture::Mosaic(raw) => raw.plane.mean(),
            Capture::Full { image, .. } => {
                image.pixels.iter().flatten().sum::<f64>() / (3 * image.pixels.len()) as f64
            }
        }
    }

    pub fn as_mosaic(&self) -> Option<&RawImage> {
        match self {
            Capture::Mosaic(raw) => Some(raw),
            Capture::Full { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Capture>,
    pub test: Vec<TestView>,
    pub bbox: Aabb,
    pub bayer_pattern: BayerPattern,
    /// Noise applied to each training image, `None` where it was skipped.
    pub train_noise: Vec<Option<NoiseParams>>,
}

impl Dataset {
    pub fn shutters(&self) -> Vec<f64> {
        self.train.iter().map(|c| c.meta().shutter).collect()
    }
}

fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Renders, unprocesses, miscalibrates and corrupts the training views, and
/// renders clean test views with foreground masks.
pub fn generate_dataset(spec: &SceneSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let truth = bake_scene(spec)?;
    let t_ref = spec.longest_shutter();

    let per_pose = if spec.bracketed { spec.shutters.len() } else { 1 };
    let train_poses = spec.sample_poses(spec.n_train.div_ceil(per_pose), 0.0);
    let mut train = Vec::with_capacity(spec.n_train);
    let mut train_noise = Vec::with_capacity(spec.n_train);
    for k in 0..spec.n_train {
        let entry = spec.shutters[k % spec.shutters.len()];
        let meta = spec.camera(train_poses[k / per_pose].clone(), entry.time);
        let mut hdr = render_view(&truth, &meta, spec.render_samples)?.color;
        hdr.color_space = ColorSpace::LinearRGB;
        let exposed = hdr.map(|p| p.map(|v| v * entry.time));
        let noise = (!entry.noiseless).then_some(spec.noise);
        let capture = if spec.mosaic {
            let mut raw = unprocess(&exposed, &meta, spec.bayer_pattern)?;
            if let Some(table) = &spec.miscalibration {
                raw = apply_miscalibration(&raw, table)?;
            }
            if let Some(noise) = noise {
                raw.plane = sample_noise(&raw.plane, noise, image_seed(seed, k))?;
            }
            Capture::Mosaic(raw)
        } else {
            let mut image = unprocess_rgb(&exposed, &meta)?;
            if let Some(table) = &spec.miscalibration {
                let alpha = table.alpha(entry.time)?;
                image = image.map(|p| [p[0] * alpha[0], p[1] * alpha[1], p[2] * alpha[2]]);
            }
            if let Some(noise) = noise {
                let planes = (0..3)
                    .map(|c| sample_noise(&image.channel(c), noise, image_seed(seed, 3 * k + c)))
                    .collect::<Result<Vec<_>>>()?;
                image = RgbImage::from_channels([&planes[0], &planes[1], &planes[2]], ColorSpace::CameraRGB)?;
            }
            Capture::Full { image, meta }
        };
        train_noise.push(noise);
        train.push(capture);
    }

    let test = spec
        .sample_poses(spec.n_test, 0.5)
        .into_iter()
        .map(|pose| {
            let meta = spec.camera(pose, t_ref);
            let view = render_view(&truth, &meta, spec.render_samples)?;
            let mut hdr = view.color;
            hdr.color_space = ColorSpace::LinearRGB;
            let mask = view.opacity.map(|a| if a > MASK_THRESHOLD { 1.0 } else { 0.0 });
            Ok(TestView { meta, hdr, mask })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        train,
        test,
        bbox: spec.bbox,
        bayer_pattern: spec.bayer_pattern,
        train_noise,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEntry {
    pub image: PathBuf,
    pub meta: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub meta: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub bbox: Aabb,
    pub bayer_pattern: BayerPattern,
    pub train: Vec<TrainEntry>,
    pub test: Vec<TestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

pub const MANIFEST: &str = "dataset.json";

impl Dataset {
    /// Writes `images/`, `meta/`, `test/`, `masks/` and `dataset.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, seed: Option<u64>, scene: Option<&SceneSpec>) -> Result<Manifest> {
        let dir = dir.as_ref();
        for sub in ["images", "meta", "test", "masks"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut manifest = Manifest {
            bbox: self.bbox,
            bayer_pattern: self.bayer_pattern,
            train: Vec::new(),
            test: Vec::new(),
            seed,
            scene: scene.cloned(),
        };
        for (k, capture) in self.train.iter().enumerate() {
            let entry = TrainEntry {
                image: format!("images/{k:03}.pfm").into(),
                meta: format!("meta/{k:03}.json").into(),
            };
            match capture {
                Capture::Mosaic(raw) => raw.plane.write_pfm(dir.join(&entry.image))?,
                Capture::Full { image, .. } => image.write_pfm(dir.join(&entry.image))?,
            }
            MetadataSidecar {
                meta: capture.meta().clone(),
                bayer_pattern: self.bayer_pattern,
                noise: self.train_noise.get(k).copied().flatten(),
            }
            .write(dir.join(&entry.meta))?;
            manifest.train.push(entry);
        }
        for (k, view) in self.test.iter().enumerate() {
            let entry = TestEntry {
                image: format!("test/{k:03}.pfm").into(),
                mask: format!("masks/{k:03}.pfm").into(),
                meta: format!("meta/test_{k:03}.json").into(),
            };
            view.hdr.write_pfm(dir.join(&entry.image))?;
            view.mask.write_pfm(dir.join(&entry.mask))?;
            MetadataSidecar {
                meta: view.meta.clone(),
                bayer_pattern: self.bayer_pattern,
                noise: None,
            }
            .write(dir.join(&entry.meta))?;
            manifest.test.push(entry);
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Manifest)> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut train = Vec::new();
        let mut train_noise = Vec::new();
        for entry in &manifest.train {
            let side = MetadataSidecar::read(dir.join(&entry.meta))?;
            if side.bayer_pattern != manifest.bayer_pattern {
                return Err(Error::format(dir.join(&entry.meta), "Bayer pattern differs from the manifest"));
            }
            let path = dir.join(&entry.image);
            let capture = if crate::image::pfm_channels(&path)? == 3 {
                Capture::Full {
                    image: RgbImage::read_pfm(&path, ColorSpace::CameraRGB)?,
                    meta: side.meta,
                }
            } else {
                Capture::Mosaic(RawImage::new(Plane::read_pfm(&path)?, side.bayer_pattern, side.meta)?)
            };
            train.push(capture);
            train_noise.push(side.noise);
        }
        let mut test = Vec::new();
        for entry in &manifest.test {
            let side = MetadataSidecar::read(dir.join(&entry.meta))?;
            test.push(TestView {
                meta: side.meta,
                hdr: RgbImage::read_pfm(dir.join(&entry.image), ColorSpace::LinearRGB)?,
                mask: Plane::read_pfm(dir.join(&entry.mask))?,
            });
        }
        Ok((
            Dataset {
                train,
                test,
                bbox: manifest.bbox,
                bayer_pattern: manifest.bayer_pattern,
                train_noise,
            },
            manifest,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{clipped_pixel_ray, render_samples, stratified_boundaries};
    use crate::pipeline::unprocess_rgb;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            resolution: [24; 3],
            n_train: 4,
            n_test: 2,
            width: 16,
            height: 16,
            focal: 20.0,
            render_samples: 48,
            ..Default::default()
        }
    }

    fn center_color(field: &VoxelField, meta: &CameraMetadata) -> [f64; 3] {
        let (cx, cy) = (meta.intrinsics.width / 2, meta.intrinsics.height / 2);
        let ray = clipped_pixel_ray(meta, cx, cy, &field.bbox).unwrap().unwrap();
        let b = stratified_boundaries::<rand_chacha::ChaCha8Rng>(ray.t_near, ray.t_far, 256, None);
        render_samples(field, &ray, b).color
    }

    #[test]
    fn desk_scene_is_hdr_and_in_camera_gamut() {
        let spec = SceneSpec::default();
        spec.validate().unwrap();
        assert!(spec.dynamic_range() >= 1e3);
        let meta = spec.camera(Pose::default(), 1.0);
        for p in &spec.primitives {
            let img = RgbImage::filled(2, 2, p.color, ColorSpace::LinearRGB);
            let cam = unprocess_rgb(&img, &meta).unwrap().get(0, 0);
            assert!(cam.iter().all(|&v| v > 0.0 && v < 1.0), "{:?} -> {cam:?}", p.color);
        }
    }

    #[test]
    fn empty_scene_renders_black() {
        let spec = SceneSpec {
            primitives: vec![],
            ..small_spec()
        };
        let field = bake_scene(&spec).unwrap();
        let meta = spec.camera(spec.sample_poses(1, 0.0)[0].clone(), 1.0);
        let view = render_view(&field, &meta, 32).unwrap();
        assert!(view.color.pixels.iter().flatten().all(|&v| v.abs() < 1e-5));
    }

    #[test]
    fn opaque_box_center_ray_sees_box_color() {
        let color = [0.3, 1.7, 0.05];
        let spec = SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Box {
                    min: [-0.5; 3],
                    max: [0.5; 3],
                },
                color,
                density: 200.0,
            }],
            ..small_spec()
        };
        let field = bake_scene(&spec).unwrap();
        let meta = spec.camera(spec.sample_poses(1, 0.0)[0].clone(), 1.0);
        let c = center_color(&field, &meta);
        for ch in 0..3 {
            assert!((c[ch] - color[ch]).abs() < 1e-3, "{c:?}");
        }
    }

    #[test]
    fn occluded_box_hidden_from_front_visible_from_side() {
        let red = [1.0, 0.01, 0.01];
        let blue = [0.01, 0.01, 1.0];
        let spec = SceneSpec {
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        min: [-0.3, -0.3, 0.4],
                        max: [0.3, 0.3, 0.8],
                    },
                    color: red,
                    density: 200.0,
                },
                Primitive {
                    shape: Shape::Box {
                        min: [-0.3, -0.3, -0.8],
                        max: [0.3, 0.3, -0.4],
                    },
                    color: blue,
                    density: 200.0,
                },
            ],
            ..small_spec()
        };
        let field = bake_scene(&spec).unwrap();
        let up = Vector3::new(0.0, 1.0, 0.0);
        let front = spec.camera(Pose::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, 0.0, 0.6), up), 1.0);
        let back = spec.camera(Pose::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::new(0.0, 0.0, -0.6), up), 1.0);
        let f = center_color(&field, &front);
        let b = center_color(&field, &back);
        assert!(f[0] > 0.99 && f[2] < 0.02, "front sees {f:?}");
        assert!(b[2] > 0.99 && b[0] < 0.02, "back sees {b:?}");
    }

    #[test]
    fn fixed_seed_is_reproducible_and_signal_scales_with_shutter() {
        let spec = SceneSpec {
            shutters: vec![ShutterEntry::noisy(1.0), ShutterEntry::noisy(0.25)],
            ..small_spec()
        };
        let a = generate_dataset(&spec, 11).unwrap();
        let b = generate_dataset(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shutters(), vec![1.0, 0.25, 1.0, 0.25]);

        let clean = SceneSpec {
            shutters: vec![ShutterEntry::clean(1.0), ShutterEntry::clean(0.25)],
            n_train: 2,
            ..small_spec()
        };
        let d = generate_dataset(&clean, 0).unwrap();
        let long = SceneSpec {
            shutters: vec![ShutterEntry::clean(1.0)],
            ..clean.clone()
        };
        let reference = generate_dataset(&long, 0).unwrap();
        let ratio = d.train[1].mean() / reference.train[1].mean();
        assert!((ratio - 0.25).abs() < 1e-12, "{ratio}");
    }

    fn samples(c: &Capture) -> Vec<f64> {
        match c {
            Capture::Mosaic(raw) => raw.plane.data.clone(),
            Capture::Full { image, .. } => image.pixels.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        for mosaic in [true, false] {
            let spec = SceneSpec {
                shutters: vec![ShutterEntry::noisy(0.5)],
                mosaic,
                ..small_spec()
            };
            let data = generate_dataset(&spec, 3).unwrap();
            assert_eq!(data.train[0].as_mosaic().is_some(), mosaic);
            let dir = tempfile::tempdir().unwrap();
            let manifest = data.save(dir.path(), Some(3), Some(&spec)).unwrap();
            assert_eq!(manifest.train.len() + manifest.test.len(), 6);
            let (back, m2) = Dataset::load(dir.path()).unwrap();
            assert_eq!(manifest, m2);
            assert_eq!(back.train.len(), 4);
            for (x, y) in back.train.iter().zip(&data.train) {
                assert_eq!(x.meta(), y.meta());
                assert_eq!(x.as_mosaic().is_some(), mosaic);
                for (u, v) in samples(x).iter().zip(&samples(y)) {
                    assert!((u - v).abs() <= 1e-6 * v.abs().max(1e-3));
                }
            }
            assert_eq!(back.train_noise, data.train_noise);
            assert_eq!(back.test[0].mask, data.test[0].mask);
        }
    }

    #[test]
    fn full_captures_hold_the_unmosaicked_camera_image() {
        let spec = SceneSpec {
            n_train: 1,
            ..small_spec()
        };
        let mosaicked = generate_dataset(&spec, 0).unwrap();
        let full = generate_dataset(&SceneSpec { mosaic: false, ..spec }, 0).unwrap();
        let (Capture::Mosaic(raw), Capture::Full { image, .. }) = (&mosaicked.train[0], &full.train[0]) else {
            panic!("unexpected capture kinds");
        };
        for y in 0..raw.height() {
            for x in 0..raw.width() {
                assert_eq!(raw.plane.get(x, y), image.get(x, y)[raw.channel_at(x, y)]);
            }
        }
    }
}
