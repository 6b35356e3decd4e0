//! Raw-versus-LDR supervision comparison on synthetic data.
//!
//! Both trainees see the same noisy captures. The raw one learns from the
//! linear values directly; the LDR one learns from the same captures after
//! the full display pipeline. Both are scored in display
//! sRGB against clean renders on the foreground mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_view, VoxelField};
use crate::image::{ColorSpace, RgbImage};
use crate::metrics::{masked_psnr, ssim_rgb, MetricsReport, MetricsRow};
use crate::pipeline::{camera_to_linear, percentile, postprocess, postprocess_rgb, tonemap, PipelineConfig};
use crate::synth::{generate_dataset, Capture, Dataset, SceneSpec, ShutterEntry, TestView};
use crate::train::{train, TrainConfig, TrainingSet};

/// Percentile of the pooled clean test renders mapped to white.
pub const DISPLAY_PERCENTILE: f64 = 97.0;

/// Exposure multiplier shared by ground truth and predictions, chosen from
/// the clean test renders so every method is displayed identically.
pub fn display_gain(test: &[TestView]) -> Result<f64> {
    let pooled: Vec<f64> = test.iter().flat_map(|v| v.hdr.pixels.iter().flatten().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::InvalidParameter("no test views to derive exposure from".into()));
    }
    Ok(1.0 / percentile(&pooled, DISPLAY_PERCENTILE).max(crate::pipeline::EXPOSURE_FLOOR))
}

/// Display-referred image of a trained field at a test pose.
pub fn display_render(field: &VoxelField, view: &TestView, gain: f64, samples: usize) -> Result<RgbImage> {
    let color = render_view(field, &view.meta, samples)?.color;
    match color.color_space {
        ColorSpace::Srgb => Ok(color),
        _ => tonemap(&camera_to_linear(&color, &view.meta)?, gain),
    }
}

/// Masked PSNR and SSIM of `field` on every test view.
pub fn evaluate(field: &VoxelField, test: &[TestView], gain: f64, samples: usize) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (k, view) in test.iter().enumerate() {
        let truth = tonemap(&view.hdr, gain)?;
        let pred = display_render(field, view, gain, samples)?;
        report.push(MetricsRow {
            name: format!("test {k:03}"),
            psnr: masked_psnr(&truth, &pred, &view.mask)?,
            ssim: Some(ssim_rgb(&truth, &pred)?),
            raw_psnr: None,
        });
    }
    Ok(report)
}

/// Postprocesses every capture with the display exposure, compensating for
/// its shutter time.
pub fn ldr_training_set(data: &Dataset, gain: f64) -> Result<TrainingSet> {
    let images = data
        .train
        .iter()
        .map(|capture| {
            let meta = capture.meta();
            let cfg = PipelineConfig::with_gain(gain / meta.shutter);
            let image = match capture {
                Capture::Mosaic(raw) => postprocess(raw, &cfg)?,
                Capture::Full { image, .. } => postprocess_rgb(image, meta, &cfg)?,
            };
            Ok((image, meta.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet::ldr(images, data.bbox))
}

/// Linear supervision. Mixed mosaicked and full captures are rejected.
pub fn raw_training_set(data: &Dataset) -> Result<TrainingSet> {
    if let Some(raws) = data.train.iter().map(|c| c.as_mosaic().cloned()).collect::<Option<Vec<_>>>() {
        return Ok(TrainingSet::raw(raws, data.bbox));
    }
    let full = data
        .train
        .iter()
        .map(|c| match c {
            Capture::Full { image, meta } => Ok((image.clone(), meta.clone())),
            Capture::Mosaic(_) => Err(Error::InvalidParameter("dataset mixes mosaicked and full captures".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet::camera(full, data.bbox))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub shutter: ShutterEntry,
    pub raw_psnr: f64,
    pub ldr_psnr: f64,
    pub raw_final_loss: f64,
    pub ldr_final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub scene: SceneSpec,
    pub grid: Vec<ShutterEntry>,
    pub raw: TrainConfig,
    pub ldr: TrainConfig,
    pub eval_samples: usize,
    pub seed: u64,
}

/// Trains both supervision modes at one shutter setting.
pub fn run_setting(cfg: &AblationConfig, shutter: ShutterEntry) -> Result<AblationRow> {
    let spec = SceneSpec {
        shutters: vec![shutter],
        ..cfg.scene.clone()
    };
    let data = generate_dataset(&spec, cfg.seed)?;
    let gain = display_gain(&data.test)?;

    let raw_state = train(&raw_training_set(&data)?, &cfg.raw)?;
    let raw_report = evaluate(&raw_state.field, &data.test, gain, cfg.eval_samples)?;

    let ldr_state = train(&ldr_training_set(&data, gain)?, &cfg.ldr)?;
    let ldr_report = evaluate(&ldr_state.field, &data.test, gain, cfg.eval_samples)?;

    Ok(AblationRow {
        shutter,
        raw_psnr: raw_report.mean("raw").psnr,
        ldr_psnr: ldr_report.mean("ldr").psnr,
        raw_final_loss: raw_state.losses.last().copied().unwrap_or(f64::NAN),
        ldr_final_loss: ldr_state.losses.last().copied().unwrap_or(f64::NAN),
    })
}

pub fn run(cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    cfg.grid.iter().map(|&s| run_setting(cfg, s)).collect()
}

impl AblationConfig {
    /// The desk scene at 64×64 with unmosaicked captures, a clean point and
    /// three noisy shutters whose postprocessed inputs range from about
    /// 18 dB down to 12 dB PSNR.
    pub fn desk() -> Self {
        let raw = TrainConfig {
            steps: 1000,
            lr_init: 3.0,
            lr_final: 1e-2,
            tv_density: 0.03,
            tv_color: 1.0,
            ..TrainConfig::grid()
        };
        let ldr = TrainConfig {
            steps: 1000,
            lr_final: 1e-2,
            density_lr_scale: 30.0,
            ..TrainConfig::grid().ldr()
        };
        AblationConfig {
            scene: SceneSpec {
                mosaic: false,
                ..SceneSpec::default()
            },
            grid: vec![
                ShutterEntry::clean(1.0),
                ShutterEntry::noisy(1.0 / 2.0),
                ShutterEntry::noisy(1.0 / 4.0),
                ShutterEntry::noisy(1.0 / 8.0),
            ],
            raw,
            ldr,
            eval_samples: 96,
            seed: 1,
        }
    }
}
