//! Optimization of a voxel field (and exposure calibration) against raw or
//! display-referred training images.
//!
//! Every step samples rays uniformly with replacement over all
//! `(image, pixel)` pairs (minus a border), renders them, evaluates the
//! per-ray loss plus the weighted depth-variance regularizer, clips the
//! global gradient norm and applies Adam with an exponentially decaying
//! learning rate. Per-ray work runs in parallel, but gradient contributions
//! are applied in ray order, so results do not depend on the thread count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraMetadata;
use crate::error::{Error, Result};
use crate::field::{
    clipped_pixel_ray, render_samples, stratified_boundaries, weight_variance, weight_variance_grad, Aabb,
    ColorActivation, Container, FieldGrad, GradSink, NodeParams, VarianceMode, VoxelField,
};
use crate::image::{ColorSpace, RgbImage};
use crate::loss::{bayer_masked_loss, ExposureCalibration, LossConfig, LossVariant};
use crate::pipeline::RawImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Mosaicked linear raw, one channel per pixel, exposure-scaled.
    #[default]
    Raw,
    /// Postprocessed display sRGB, all three channels.
    Ldr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub resolution: [usize; 3],
    pub lr_init: f64,
    pub lr_final: f64,
    /// Multiplier on the learning rate of density logits only.
    pub density_lr_scale: f64,
    /// Multiplier on the learning rate of the exposure scales.
    pub calibration_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub reg_weight: f64,
    pub reg_anneal: bool,
    /// Smoothness penalty on neighboring density logits.
    pub tv_density: f64,
    /// Smoothness penalty on neighboring log-colors.
    pub tv_color: f64,
    pub variance_mode: VarianceMode,
    /// Pixels dropped on every image edge.
    pub border: usize,
    pub init_density: f64,
    pub init_color: f64,
    pub supervision: Supervision,
    pub loss: LossConfig,
    /// Whether exposure scales are optimized.
    pub learn_calibration: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_rays: 1024,
            samples_per_ray: 64,
            resolution: [64; 3],
            lr_init: 1e-3,
            lr_final: 1e-5,
            density_lr_scale: 1.0,
            calibration_lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 1.0,
            reg_weight: 1e-2,
            reg_anneal: true,
            tv_density: 0.0,
            tv_color: 0.0,
            variance_mode: VarianceMode::Normalized,
            border: 4,
            init_density: 0.1,
            init_color: 0.5,
            supervision: Supervision::Raw,
            loss: LossConfig::default(),
            learn_calibration: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Rates tuned for optimizing grid values directly, which need far
    /// larger steps than network weights.
    pub fn grid() -> Self {
        TrainConfig {
            lr_init: 0.1,
            lr_final: 1e-3,
            ..Default::default()
        }
    }

    /// Display-referred ablation: bounded color, plain L2 on all channels.
    pub fn ldr(mut self) -> Self {
        self.supervision = Supervision::Ldr;
        self.loss.variant = LossVariant::PlainL2;
        self.learn_calibration = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lr_init >= self.lr_final && self.lr_final > 0.0) {
            return bad(format!(
                "need lr_init >= lr_final > 0, got {} / {}",
                self.lr_init, self.lr_final
            ));
        }
        if !(self.density_lr_scale > 0.0) {
            return bad(format!("density_lr_scale must be positive, got {}", self.density_lr_scale));
        }
        if !(self.calibration_lr_scale > 0.0) {
            return bad(format!(
                "calibration_lr_scale must be positive, got {}",
                self.calibration_lr_scale
            ));
        }
        if self.batch_rays == 0 || self.samples_per_ray == 0 {
            return bad("batch_rays and samples_per_ray must be at least 1".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        if !(self.tv_density >= 0.0 && self.tv_color >= 0.0) {
            return bad("smoothness weights must be nonnegative".into());
        }
        if !(self.reg_weight >= 0.0) {
            return bad(format!("reg_weight must be nonnegative, got {}", self.reg_weight));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.init_color > 0.0 && self.init_color < 1.0) || !(self.init_density > 0.0) {
            return bad("initial color must be in (0, 1) and density positive".into());
        }
        self.loss.validate()
    }

    pub fn color_activation(&self) -> ColorActivation {
        match self.supervision {
            Supervision::Raw => ColorActivation::Exp,
            Supervision::Ldr => ColorActivation::Sigmoid,
        }
    }
}

/// `lr_init * (lr_final / lr_init)^(step / steps)`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.steps == 0 {
        return cfg.lr_init;
    }
    let frac = (step.min(cfg.steps) as f64) / cfg.steps as f64;
    cfg.lr_init * (cfg.lr_final / cfg.lr_init).powf(frac)
}

/// Regularizer weight, ramped linearly from 0 over the first half of
/// training when annealing.
pub fn reg_weight_at(step: u64, cfg: &TrainConfig) -> f64 {
    if !cfg.reg_anneal || cfg.steps == 0 {
        return cfg.reg_weight;
    }
    let ramp = (step as f64 / (cfg.steps as f64 / 2.0)).min(1.0);
    cfg.reg_weight * ramp
}

/// Scales every gradient by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One training image.
#[derive(Clone, Debug)]
pub enum TrainingView {
    Raw(RawImage),
    /// Linear camera RGB with every channel observed at every pixel.
    Camera { image: RgbImage, meta: CameraMetadata },
    Ldr { image: RgbImage, meta: CameraMetadata },
}

impl TrainingView {
    pub fn meta(&self) -> &CameraMetadata {
        match self {
            TrainingView::Raw(r) => &r.meta,
            TrainingView::Camera { meta, .. } | TrainingView::Ldr { meta, .. } => meta,
        }
    }

    fn size(&self) -> (usize, usize) {
        match self {
            TrainingView::Raw(r) => (r.width(), r.height()),
            TrainingView::Camera { image, .. } | TrainingView::Ldr { image, .. } => (image.width, image.height),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub views: Vec<TrainingView>,
    /// Scene bounds; also the field's bounding box.
    pub bbox: Aabb,
}

impl TrainingSet {
    pub fn raw(images: Vec<RawImage>, bbox: Aabb) -> Self {
        TrainingSet {
            views: images.into_iter().map(TrainingView::Raw).collect(),
            bbox,
        }
    }

    pub fn camera(images: Vec<(RgbImage, CameraMetadata)>, bbox: Aabb) -> Self {
        TrainingSet {
            views: images
                .into_iter()
                .map(|(image, meta)| TrainingView::Camera { image, meta })
                .collect(),
            bbox,
        }
    }

    pub fn ldr(images: Vec<(RgbImage, CameraMetadata)>, bbox: Aabb) -> Self {
        TrainingSet {
            views: images
                .into_iter()
                .map(|(image, meta)| TrainingView::Ldr { image, meta })
                .collect(),
            bbox,
        }
    }

    fn validate(&self, cfg: &TrainConfig) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidParameter("training set has no images".into()));
        }
        let mut pattern = None;
        for v in &self.views {
            match (v, cfg.supervision) {
                (TrainingView::Raw(r), Supervision::Raw) => {
                    if pattern.get_or_insert(r.bayer_pattern) != &r.bayer_pattern {
                        return Err(Error::InvalidParameter("training images mix Bayer patterns".into()));
                    }
                }
                (TrainingView::Camera { image, .. }, Supervision::Raw) => image.expect_space(ColorSpace::CameraRGB)?,
                (TrainingView::Ldr { image, .. }, Supervision::Ldr) => image.expect_space(ColorSpace::Srgb)?,
                _ => {
                    return Err(Error::InvalidParameter(
                        "training images do not match the supervision mode".into(),
                    ))
                }
            }
            let (w, h) = v.size();
            if w <= 2 * cfg.border || h <= 2 * cfg.border {
                return Err(Error::Shape(format!("{w}x{h} image is smaller than the border mask")));
            }
        }
        Ok(())
    }

    pub fn shutters(&self) -> Vec<f64> {
        self.views.iter().map(|v| v.meta().shutter).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub reg_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<NodeParams>,
    pub v: Vec<NodeParams>,
    pub m_alpha: Vec<[f64; 3]>,
    pub v_alpha: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub field: VoxelField,
    pub calibration: ExposureCalibration,
    pub moments: AdamMoments,
    pub step: u64,
    /// Mean batch loss of every step taken so far.
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn init(set: &TrainingSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let field = VoxelField::with_activation(
            cfg.resolution,
            set.bbox,
            cfg.init_density,
            [cfg.init_color; 3],
            cfg.color_activation(),
        )?;
        let calibration = ExposureCalibration::new(&set.shutters())?;
        let n = field.len();
        let k = calibration.shutters.len();
        Ok(TrainState {
            field,
            moments: AdamMoments {
                m: vec![[0.0; 4]; n],
                v: vec![[0.0; 4]; n],
                m_alpha: vec![[0.0; 3]; k],
                v_alpha: vec![[0.0; 3]; k],
            },
            calibration,
            step: 0,
            losses: Vec::new(),
        })
    }

    /// Writes field, calibration, config, step and optimizer moments to one file.
    pub fn save(&self, path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<()> {
        let mut c = Container::new(self.field.clone());
        c.extra = serde_json::json!({
            "step": self.step,
            "calibration": self.calibration,
            "config": cfg,
            "losses": self.losses,
        });
        c.arrays = vec![
            ("adam_m".into(), self.moments.m.iter().flatten().copied().collect()),
            ("adam_v".into(), self.moments.v.iter().flatten().copied().collect()),
            ("adam_m_alpha".into(), self.moments.m_alpha.iter().flatten().copied().collect()),
            ("adam_v_alpha".into(), self.moments.v_alpha.iter().flatten().copied().collect()),
        ];
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, TrainConfig)> {
        let path = path.as_ref();
        let c = Container::load(path)?;
        let bad = |m: &str| Error::format(path, m.to_string());
        let extra = &c.extra;
        let step = extra["step"].as_u64().ok_or_else(|| bad("missing step"))?;
        let calibration: ExposureCalibration = serde_json::from_value(extra["calibration"].clone())?;
        let cfg: TrainConfig = serde_json::from_value(extra["config"].clone())?;
        let losses: Vec<f64> = serde_json::from_value(extra["losses"].clone())?;
        let quads = |name: &str| -> Result<Vec<NodeParams>> {
            let a = c.array(name).ok_or_else(|| bad(&format!("missing {name}")))?;
            Ok(a.chunks_exact(4).map(|q| [q[0], q[1], q[2], q[3]]).collect())
        };
        let triples = |name: &str| -> Result<Vec<[f64; 3]>> {
            let a = c.array(name).ok_or_else(|| bad(&format!("missing {name}")))?;
            Ok(a.chunks_exact(3).map(|q| [q[0], q[1], q[2]]).collect())
        };
        let moments = AdamMoments {
            m: quads("adam_m")?,
            v: quads("adam_v")?,
            m_alpha: triples("adam_m_alpha")?,
            v_alpha: triples("adam_v_alpha")?,
        };
        if moments.m.len() != c.field.len() || moments.m_alpha.len() != calibration.shutters.len() {
            return Err(bad("optimizer state does not match the field"));
        }
        Ok((
            TrainState {
                field: c.field,
                calibration,
                moments,
                step,
                losses,
            },
            cfg,
        ))
    }
}

/// Gradient contributions of one chunk of rays, replayed in order later.
#[derive(Default)]
struct RayGrads {
    samples: Vec<(u32, NodeParams)>,
}

impl GradSink for RayGrads {
    #[inline]
    fn add(&mut self, node: u32, grad: NodeParams) {
        self.samples.push((node, grad));
    }
}


const CHUNK: usize = 16;

fn run_step(state: &mut TrainState, set: &TrainingSet, cfg: &TrainConfig, grad: &mut FieldGrad) -> Result<f64> {
    let step = state.step;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2 * step);
    let batch: Vec<(usize, usize, usize)> = (0..cfg.batch_rays)
        .map(|_| {
            let v = rng.random_range(0..set.views.len());
            let (w, h) = set.views[v].size();
            let x = rng.random_range(cfg.border..w - cfg.border);
            let y = rng.random_range(cfg.border..h - cfg.border);
            (v, x, y)
        })
        .collect();

    let lambda = reg_weight_at(step, cfg);
    let n_shutters = state.calibration.shutters.len();
    let field = &state.field;
    let calibration = &state.calibration;

    let process = |ci: usize, rays: &[(usize, usize, usize)], sink: &mut dyn GradSink| -> Result<(f64, Vec<[f64; 3]>)> {
        let mut jitter = ChaCha8Rng::seed_from_u64(cfg.seed);
        jitter.set_stream(2 * step + 1);
        jitter.set_word_pos((ci * CHUNK * cfg.samples_per_ray * 2) as u128);
        let mut loss = 0.0;
        let mut alpha_grads = vec![[0.0; 3]; n_shutters];
        for &(v, x, y) in rays {
            let view = &set.views[v];
            let meta = view.meta();
            let ray = clipped_pixel_ray(meta, x, y, &set.bbox)?;
            let (color, tape) = match &ray {
                Some(r) => {
                    let b = stratified_boundaries(r.t_near, r.t_far, cfg.samples_per_ray, Some(&mut jitter));
                    let o = render_samples(field, r, b);
                    (o.color, Some(o.tape))
                }
                None => ([0.0; 3], None),
            };

            let mut d_color = [0.0; 3];
            match view {
                TrainingView::Raw(raw) => {
                    let ch = raw.channel_at(x, y);
                    let m = bayer_masked_loss(color, raw.plane.get(x, y), ch, meta.shutter, &cfg.loss, calibration)?;
                    loss += m.value;
                    d_color = m.d_pred;
                    alpha_grads[m.shutter_index][ch] += m.d_log_alpha;
                }
                TrainingView::Camera { image, .. } => {
                    let target = image.get(x, y);
                    for ch in 0..3 {
                        let m = bayer_masked_loss(color, target[ch], ch, meta.shutter, &cfg.loss, calibration)?;
                        loss += m.value;
                        d_color[ch] = m.d_pred[ch];
                        alpha_grads[m.shutter_index][ch] += m.d_log_alpha;
                    }
                }
                TrainingView::Ldr { image, .. } => {
                    let target = image.get(x, y);
                    for c in 0..3 {
                        let (val, g) = cfg.loss.evaluate(color[c], target[c])?;
                        loss += val;
                        d_color[c] = g;
                    }
                }
            }

            if let Some(tape) = tape {
                let reg_grad = (lambda > 0.0).then(|| {
                    loss += lambda * weight_variance(&tape.samples, cfg.variance_mode);
                    let mut g = weight_variance_grad(&tape.samples, cfg.variance_mode);
                    g.iter_mut().for_each(|v| *v *= lambda);
                    g
                });
                tape.backward(field, d_color, reg_grad.as_deref(), sink);
            }
        }
        Ok((loss, alpha_grads))
    };

    let mut alpha_grad = vec![[0.0; 3]; n_shutters];
    let mut loss = 0.0;
    let mut merge = |chunk_loss: f64, chunk_alpha: &[[f64; 3]]| {
        loss += chunk_loss;
        for (a, b) in alpha_grad.iter_mut().zip(chunk_alpha) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    };
    // Both paths add the same contributions in the same order.
    if rayon::current_num_threads() > 1 {
        let chunks: Vec<Result<(f64, Vec<[f64; 3]>, RayGrads)>> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, rays)| {
                let mut sink = RayGrads {
                    samples: Vec::with_capacity(rays.len() * cfg.samples_per_ray * 8),
                };
                let (l, a) = process(ci, rays, &mut sink)?;
                Ok((l, a, sink))
            })
            .collect();
        for chunk in chunks {
            let (l, a, sink) = chunk?;
            for (node, g) in sink.samples {
                grad.add(node, g);
            }
            merge(l, &a);
        }
    } else {
        for (ci, rays) in batch.chunks(CHUNK).enumerate() {
            let (l, a) = process(ci, rays, &mut *grad)?;
            merge(l, &a);
        }
    }
    let scale = 1.0 / cfg.batch_rays as f64;
    loss *= scale;
    if cfg.tv_density > 0.0 || cfg.tv_color > 0.0 {
        let weights = [cfg.tv_density, cfg.tv_color, cfg.tv_color, cfg.tv_color];
        loss += smoothness_penalty(&state.field, weights, cfg.batch_rays as f64, grad);
    }
    if !loss.is_finite() {
        let rays: Vec<_> = batch.iter().take(4).collect();
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("batch of {} rays, first rays {rays:?}", cfg.batch_rays),
        });
    }
    for (i, a) in alpha_grad.iter_mut().enumerate() {
        if !cfg.learn_calibration || state.calibration.is_frozen(i) {
            *a = [0.0; 3];
        }
    }

    // Mean over the batch and global-norm clipping collapse into one factor
    // applied inside the Adam pass.
    let sumsq: f64 = grad
        .params
        .par_chunks(4096)
        .map(|c| c.iter().flatten().map(|v| v * v).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        + alpha_grad.iter().flatten().map(|v| v * v).sum::<f64>();
    let norm = scale * sumsq.sqrt();
    let factor = if norm > cfg.grad_clip_norm {
        scale * cfg.grad_clip_norm / norm
    } else {
        scale
    };

    adam_update(state, grad, &alpha_grad, factor, cfg);
    state.step += 1;
    state.losses.push(loss);
    Ok(loss)
}

/// Mean squared difference between 6-neighbors, per parameter channel
/// weighted by `weights`. Adds `multiplier` times its gradient to `grad`.
pub fn smoothness_penalty(field: &VoxelField, weights: [f64; 4], multiplier: f64, grad: &mut FieldGrad) -> f64 {
    let [nx, ny, nz] = field.resolution;
    let n = field.len() as f64;
    let params = &field.params;
    let slab = nx * ny;
    let per_slab: Vec<f64> = grad
        .params
        .par_chunks_mut(slab)
        .enumerate()
        .map(|(k, out)| {
            let mut loss = 0.0;
            for j in 0..ny {
                for i in 0..nx {
                    let idx = (k * ny + j) * nx + i;
                    let p = params[idx];
                    let mut g = [0.0; 4];
                    let mut visit = |q: usize, forward: bool| {
                        let q = params[q];
                        for c in 0..4 {
                            let d = p[c] - q[c];
                            g[c] += 2.0 * weights[c] * d / n;
                            if forward {
                                loss += weights[c] * d * d / n;
                            }
                        }
                    };
                    if i + 1 < nx {
                        visit(idx + 1, true);
                    }
                    if i > 0 {
                        visit(idx - 1, false);
                    }
                    if j + 1 < ny {
                        visit(idx + nx, true);
                    }
                    if j > 0 {
                        visit(idx - nx, false);
                    }
                    if k + 1 < nz {
                        visit(idx + slab, true);
                    }
                    if k > 0 {
                        visit(idx - slab, false);
                    }
                    let o = &mut out[j * nx + i];
                    for c in 0..4 {
                        o[c] += multiplier * g[c];
                    }
                }
            }
            loss
        })
        .collect();
    per_slab.iter().sum()
}

/// One Adam step with gradients `factor * grad`. Leaves `grad` zeroed.
fn adam_update(state: &mut TrainState, grad: &mut FieldGrad, alpha_grad: &[[f64; 3]], factor: f64, cfg: &TrainConfig) {
    let t = (state.step + 1) as f64;
    let lr = lr_schedule(state.step, cfg);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.adam_eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let step_size = lr * c2.sqrt() / c1;
    let eps_hat = eps * c2.sqrt();

    let update = move |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, scale: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= scale * step_size * *m / (v.sqrt() + eps_hat);
    };
    let density_scale = cfg.density_lr_scale;

    state
        .field
        .params
        .par_iter_mut()
        .zip(state.moments.m.par_iter_mut())
        .zip(state.moments.v.par_iter_mut())
        .zip(grad.params.par_iter_mut())
        .for_each(|(((p, m), v), g)| {
            update(&mut p[0], &mut m[0], &mut v[0], factor * g[0], density_scale);
            g[0] = 0.0;
            for k in 1..4 {
                update(&mut p[k], &mut m[k], &mut v[k], factor * g[k], 1.0);
                g[k] = 0.0;
            }
        });

    if cfg.learn_calibration {
        for i in 0..state.calibration.shutters.len() {
            if state.calibration.is_frozen(i) {
                continue;
            }
            for c in 0..3 {
                update(
                    &mut state.calibration.log_alpha[i][c],
                    &mut state.moments.m_alpha[i][c],
                    &mut state.moments.v_alpha[i][c],
                    factor * alpha_grad[i][c],
                    cfg.calibration_lr_scale,
                );
            }
        }
    }
}

/// Trains from scratch for `cfg.steps` steps.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::init(set, cfg)?;
    train_from(&mut state, set, cfg, |_| {})?;
    Ok(state)
}

/// Continues `state` until `cfg.steps`, reporting every step to `log`.
pub fn train_from(
    state: &mut TrainState,
    set: &TrainingSet,
    cfg: &TrainConfig,
    log: impl FnMut(&LogRecord),
) -> Result<()> {
    train_until(state, set, cfg, cfg.steps, log)
}

/// Like [`train_from`] but stops once `stop` steps are done, keeping the
/// schedules of the full `cfg.steps` run.
pub fn train_until(
    state: &mut TrainState,
    set: &TrainingSet,
    cfg: &TrainConfig,
    stop: u64,
    mut log: impl FnMut(&LogRecord),
) -> Result<()> {
    cfg.validate()?;
    set.validate(cfg)?;
    if state.field.color_activation != cfg.color_activation() {
        return Err(Error::InvalidParameter(
            "field color activation does not match the supervision mode".into(),
        ));
    }
    for t in set.shutters() {
        state.calibration.index_of(t)?;
    }
    let mut grad = FieldGrad::zeros_like(&state.field);
    while state.step < stop.min(cfg.steps) {
        let lr = lr_schedule(state.step, cfg);
        let reg_weight = reg_weight_at(state.step, cfg);
        let step = state.step;
        let loss = run_step(state, set, cfg, &mut grad)?;
        log(&LogRecord {
            step,
            loss,
            lr,
            reg_weight,
        });
    }
    Ok(())
}
