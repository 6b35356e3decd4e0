//! Command-line front end: simulate, train, render, postprocess, defocus, eval.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ablation::{display_gain, evaluate, ldr_training_set, raw_training_set};
use crate::camera::{CameraMetadata, MetadataSidecar};
use crate::error::{Error, Result};
use crate::field::{render_view, ColorActivation, VoxelField};
use crate::image::{pfm_channels, ColorSpace, Plane, RgbImage};
use crate::metrics::{masked_psnr, ssim_rgb, MetricsReport, MetricsRow};
use crate::mpi::{defocus, extract_mpi, DefocusParams, DepthRange, MpiStack};
use crate::pipeline::{camera_to_linear, postprocess, postprocess_rgb, tonemap, PipelineConfig, RawImage};
use crate::synth::{generate_dataset, Dataset, SceneSpec};
use crate::train::{train_from, TrainConfig, TrainState};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rawfield", version, about = "Raw-domain HDR volumetric reconstruction")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Require bit-reproducible results.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker thread cap; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic raw dataset.
    Simulate(SimulateArgs),
    /// Fit a voxel field to a dataset.
    Train(TrainArgs),
    /// Render a trained field from one camera.
    Render(RenderArgs),
    /// Convert a raw or camera-RGB image to display sRGB.
    Postprocess(PostprocessArgs),
    /// Synthetic depth of field from a trained field or a stored MPI.
    Defocus(DefocusArgs),
    /// Score a field on a dataset's test views, or compare two images.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossDomain {
    Raw,
    Ldr,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Total step count; when resuming, training continues up to it.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, value_enum, default_value = "raw")]
    pub loss: LossDomain,
    /// Continue from this checkpoint with its stored configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines step log; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Which camera to use: a metadata sidecar, or a view of a dataset.
#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Camera metadata JSON.
    #[arg(long, conflicts_with = "data")]
    pub camera: Option<PathBuf>,
    #[arg(long, requires = "view")]
    pub data: Option<PathBuf>,
    /// `train:K` or `test:K`.
    #[arg(long)]
    pub view: Option<String>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// HDR output (PFM); a metadata sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a display preview.
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Single-channel raw mosaic or three-channel camera RGB (PFM).
    #[arg(long)]
    pub input: PathBuf,
    /// Metadata sidecar; defaults to the input path with `.json`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed exposure multiplier instead of the percentile rule.
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Leave missing mosaic channels at zero.
    #[arg(long)]
    pub no_demosaic: bool,
}

#[derive(Debug, Args)]
pub struct DefocusArgs {
    #[arg(long, required_unless_present = "mpi")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Read the MPI from this directory instead of extracting one.
    #[arg(long, conflicts_with = "checkpoint")]
    pub mpi: Option<PathBuf>,
    /// Store the extracted MPI here.
    #[arg(long)]
    pub save_mpi: Option<PathBuf>,
    #[arg(long)]
    pub planes: Option<usize>,
    #[arg(long)]
    pub near: Option<f64>,
    #[arg(long)]
    pub far: Option<f64>,
    #[arg(long)]
    pub focus: Option<usize>,
    #[arg(long)]
    pub delta_r: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["DX", "DY"], allow_negative_numbers = true)]
    pub delta_d: Option<Vec<f64>>,
    #[arg(long)]
    pub recenter: bool,
    /// HDR output (PFM) with a metadata sidecar.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "checkpoint", conflicts_with_all = ["pred", "truth"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Rendered camera-RGB PFM (with sidecar) to compare against `--truth`.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Linear RGB reference PFM.
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub samples: usize,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection { samples: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefocusSection {
    pub planes: usize,
    pub samples_per_plane: usize,
    /// Depth range; derived from the scene bounds when absent.
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub i_focus: Option<usize>,
    pub delta_r: f64,
    pub delta_d: [f64; 2],
    pub recenter: bool,
}

impl Default for DefocusSection {
    fn default() -> Self {
        DefocusSection {
            planes: 32,
            samples_per_plane: 8,
            near: None,
            far: None,
            i_focus: None,
            delta_r: 1.0,
            delta_d: [0.0, 0.0],
            recenter: false,
        }
    }
}

/// Everything a run can be configured with from a file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub render: RenderSection,
    pub defocus: DefocusSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Treats invalid values coming from the configuration as usage errors.
fn checked(r: Result<()>) -> CliResult<()> {
    r.map_err(|e| usage(e.to_string()))
}

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn writable(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(usage(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => {
            existing(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = Some(s);
    }
    config.deterministic |= cli.deterministic;
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    let dispatch = || match &cli.command {
        Command::Simulate(a) => cmd_simulate(&config, a),
        Command::Train(a) => cmd_train(&config, a),
        Command::Render(a) => cmd_render(&config, a),
        Command::Postprocess(a) => cmd_postprocess(&config, a),
        Command::Defocus(a) => cmd_defocus(&config, a),
        Command::Eval(a) => cmd_eval(&config, a),
    };
    match config.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Runtime(Error::InvalidParameter(format!("thread pool: {e}"))))?
            .install(dispatch),
        None => dispatch(),
    }
}

pub fn cmd_simulate(config: &RunConfig, args: &SimulateArgs) -> CliResult<()> {
    writable(&args.out)?;
    checked(config.scene.validate())?;
    let seed = config.seed.unwrap_or(0);
    let data = generate_dataset(&config.scene, seed)?;
    let manifest = data.save(&args.out, Some(seed), Some(&config.scene))?;
    println!(
        "wrote {} training and {} test views to {}",
        manifest.train.len(),
        manifest.test.len(),
        args.out.display()
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    existing(dir, "dataset")?;
    Ok(Dataset::load(dir)?.0)
}

pub fn cmd_train(config: &RunConfig, args: &TrainArgs) -> CliResult<()> {
    let data = load_dataset(&args.data)?;
    writable(&args.out)?;
    let (resumed, mut cfg) = match &args.resume {
        Some(path) => {
            existing(path, "checkpoint")?;
            let (state, cfg) = TrainState::load(path)?;
            (Some(state), cfg)
        }
        None => {
            let mut cfg = config.train.clone();
            if args.loss == LossDomain::Ldr {
                cfg = cfg.ldr();
            }
            if let Some(s) = config.seed {
                cfg.seed = s;
            }
            (None, cfg)
        }
    };
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    checked(cfg.validate())?;
    let set = match cfg.color_activation() {
        ColorActivation::Exp => raw_training_set(&data)?,
        ColorActivation::Sigmoid => {
            let gain = if data.test.is_empty() {
                config.pipeline.manual_gain.unwrap_or(1.0)
            } else {
                display_gain(&data.test)?
            };
            ldr_training_set(&data, gain)?
        }
    };
    let mut state = match resumed {
        Some(s) => s,
        None => TrainState::init(&set, &cfg)?,
    };

    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    writable(&log_path)?;
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut log_error = None;
    train_from(&mut state, &set, &cfg, |record| {
        if log_error.is_none() {
            let line = serde_json::to_string(record).map(|s| writeln!(log, "{s}"));
            match line {
                Ok(Ok(())) => {}
                Ok(Err(e)) => log_error = Some(Error::io(&log_path, e)),
                Err(e) => log_error = Some(e.into()),
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    state.save(&args.out, &cfg)?;
    println!(
        "step {} loss {:.6} -> {}",
        state.step,
        state.losses.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

/// Loads a field from either a training checkpoint or a bare field file.
fn load_field(path: &Path) -> CliResult<VoxelField> {
    existing(path, "checkpoint")?;
    Ok(VoxelField::load(path)?)
}

fn resolve_camera(args: &CameraArgs) -> CliResult<CameraMetadata> {
    if let Some(path) = &args.camera {
        existing(path, "camera file")?;
        return Ok(MetadataSidecar::read(path)?.meta);
    }
    let (Some(dir), Some(view)) = (&args.data, &args.view) else {
        return Err(usage("give --camera, or --data with --view"));
    };
    let data = load_dataset(dir)?;
    let (kind, index) = view
        .split_once(':')
        .and_then(|(k, i)| Some((k, i.parse::<usize>().ok()?)))
        .ok_or_else(|| usage(format!("bad view '{view}', expected train:K or test:K")))?;
    let meta = match kind {
        "train" => data.train.get(index).map(|c| c.meta().clone()),
        "test" => data.test.get(index).map(|t| t.meta.clone()),
        _ => return Err(usage(format!("bad view kind '{kind}'"))),
    };
    meta.ok_or_else(|| usage(format!("view {view} is out of range")))
}

fn write_sidecar(image: &Path, meta: &CameraMetadata) -> Result<()> {
    MetadataSidecar {
        meta: meta.clone(),
        bayer_pattern: Default::default(),
        noise: None,
    }
    .write(sidecar_path(image))
}

/// Display version of a rendered image.
fn preview(img: &RgbImage, meta: &CameraMetadata, pipeline: &PipelineConfig, gain: Option<f64>) -> Result<RgbImage> {
    if img.color_space == ColorSpace::Srgb {
        return Ok(img.clone());
    }
    let cfg = PipelineConfig {
        manual_gain: gain.or(pipeline.manual_gain),
        ..pipeline.clone()
    };
    postprocess_rgb(img, meta, &cfg)
}

pub fn cmd_render(config: &RunConfig, args: &RenderArgs) -> CliResult<()> {
    let field = load_field(&args.checkpoint)?;
    let meta = resolve_camera(&args.camera)?;
    writable(&args.out)?;
    let samples = args.samples.unwrap_or(config.render.samples);
    if samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let view = render_view(&field, &meta, samples)?;
    view.color.write_pfm(&args.out)?;
    write_sidecar(&args.out, &meta)?;
    if let Some(png) = &args.png {
        writable(png)?;
        preview(&view.color, &meta, &config.pipeline, args.gain)?.write_png(png)?;
    }
    println!("rendered {}x{} -> {}", view.color.width, view.color.height, args.out.display());
    Ok(())
}

pub fn cmd_postprocess(config: &RunConfig, args: &PostprocessArgs) -> CliResult<()> {
    existing(&args.input, "input image")?;
    let meta_path = args.meta.clone().unwrap_or_else(|| sidecar_path(&args.input));
    existing(&meta_path, "metadata sidecar")?;
    writable(&args.out)?;
    let side = MetadataSidecar::read(&meta_path)?;
    let mut cfg = config.pipeline.clone();
    if let Some(g) = args.gain {
        cfg.manual_gain = Some(g);
    }
    if let Some(p) = args.percentile {
        cfg.exposure_percentile = p;
    }
    if args.no_demosaic {
        cfg.apply_demosaic = false;
    }
    checked(cfg.validate())?;
    let out = if pfm_channels(&args.input)? == 1 {
        let raw = RawImage::new(Plane::read_pfm(&args.input)?, side.bayer_pattern, side.meta)?;
        postprocess(&raw, &cfg)?
    } else {
        let img = RgbImage::read_pfm(&args.input, ColorSpace::CameraRGB)?;
        postprocess_rgb(&img, &side.meta, &cfg)?
    };
    out.write_png(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Near and far depths that bracket the field's bounds as seen from `meta`.
fn default_range(field: &VoxelField, meta: &CameraMetadata) -> DepthRange {
    let bb = &field.bbox;
    let forward = meta.pose.forward();
    let center = meta.pose.center();
    let depths: Vec<f64> = (0..8)
        .map(|k| {
            let corner = nalgebra::Vector3::new(
                if k & 1 == 0 { bb.min[0] } else { bb.max[0] },
                if k & 2 == 0 { bb.min[1] } else { bb.max[1] },
                if k & 4 == 0 { bb.min[2] } else { bb.max[2] },
            );
            (corner - center).dot(&forward)
        })
        .collect();
    let far = depths.iter().copied().fold(f64::MIN, f64::max);
    let near = depths.iter().copied().fold(f64::MAX, f64::min).max(far * 1e-3);
    DepthRange { near, far }
}

pub fn cmd_defocus(config: &RunConfig, args: &DefocusArgs) -> CliResult<()> {
    let sec = &config.defocus;
    writable(&args.out)?;
    let mpi = match (&args.mpi, &args.checkpoint) {
        (Some(dir), _) => {
            existing(dir, "MPI directory")?;
            MpiStack::load(dir)?
        }
        (None, Some(ckpt)) => {
            let field = load_field(ckpt)?;
            let meta = resolve_camera(&args.camera)?;
            let fallback = default_range(&field, &meta);
            let range = DepthRange {
                near: args.near.or(sec.near).unwrap_or(fallback.near),
                far: args.far.or(sec.far).unwrap_or(fallback.far),
            };
            checked(range.validate())?;
            let planes = args.planes.unwrap_or(sec.planes);
            if planes == 0 || sec.samples_per_plane == 0 {
                return Err(usage("need at least one plane and one sample per plane"));
            }
            extract_mpi(&field, &meta, planes, range, sec.samples_per_plane)?
        }
        (None, None) => return Err(usage("give --checkpoint or --mpi")),
    };
    if let Some(dir) = &args.save_mpi {
        writable(dir)?;
        mpi.save(dir)?;
    }
    let delta_d = match &args.delta_d {
        Some(v) => [v[0], v[1]],
        None => sec.delta_d,
    };
    let params = DefocusParams {
        i_focus: args.focus.or(sec.i_focus).unwrap_or(mpi.len() / 2),
        delta_r: args.delta_r.unwrap_or(sec.delta_r),
        delta_d,
        recenter: args.recenter || sec.recenter,
    };
    checked(params.validate(mpi.len()))?;
    let image = defocus(&mpi, &params)?;
    image.write_pfm(&args.out)?;
    write_sidecar(&args.out, &mpi.camera)?;
    if let Some(png) = &args.png {
        writable(png)?;
        preview(&image, &mpi.camera, &config.pipeline, args.gain)?.write_png(png)?;
    }
    println!(
        "defocused {} planes (focus {}, delta_r {}) -> {}",
        mpi.len(),
        params.i_focus,
        params.delta_r,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> CliResult<()> {
    let report = match (&args.data, &args.checkpoint, &args.pred, &args.truth) {
        (Some(dir), Some(ckpt), _, _) => {
            let data = load_dataset(dir)?;
            if data.test.is_empty() {
                return Err(usage("dataset has no test views"));
            }
            let field = load_field(ckpt)?;
            let gain = display_gain(&data.test)?;
            evaluate(&field, &data.test, gain, args.samples.unwrap_or(config.render.samples))?
        }
        (_, _, Some(pred), Some(truth)) => {
            existing(pred, "prediction")?;
            existing(truth, "reference")?;
            let truth_img = RgbImage::read_pfm(truth, ColorSpace::LinearRGB)?;
            let meta_path = sidecar_path(pred);
            existing(&meta_path, "prediction sidecar")?;
            let meta = MetadataSidecar::read(&meta_path)?.meta;
            let pred_img = camera_to_linear(&RgbImage::read_pfm(pred, ColorSpace::CameraRGB)?, &meta)?;
            let mask = match &args.mask {
                Some(m) => {
                    existing(m, "mask")?;
                    Plane::read_pfm(m)?
                }
                None => Plane::filled(truth_img.width, truth_img.height, 1.0),
            };
            let gain = display_gain(&[crate::synth::TestView {
                meta,
                hdr: truth_img.clone(),
                mask: mask.clone(),
            }])?;
            let (x, y) = (tonemap(&truth_img, gain)?, tonemap(&pred_img, gain)?);
            let mut report = MetricsReport::default();
            report.push(MetricsRow {
                name: pred.display().to_string(),
                psnr: masked_psnr(&x, &y, &mask)?,
                ssim: Some(ssim_rgb(&x, &y)?),
                raw_psnr: None,
            });
            report
        }
        _ => return Err(usage("give --data with --checkpoint, or --pred with --truth")),
    };
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        writable(out)?;
        std::fs::write(out, report.to_json()?).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
