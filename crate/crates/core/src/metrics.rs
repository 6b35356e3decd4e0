//! Image quality metrics: affine color alignment, PSNR, SSIM and raw PSNR.

use serde::{Deserialize, Serialize};

use crate::camera::BayerPattern;
use crate::error::{Error, Result};
use crate::image::{Plane, RgbImage};
use crate::pipeline::RawImage;

/// Reported for identical images instead of infinity.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Least-squares fit `a * x + b ≈ y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFit {
    pub a: f64,
    pub b: f64,
}

impl AlignmentFit {
    pub fn invert(&self, y: f64) -> f64 {
        (y - self.b) / self.a
    }
}

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("cannot compare {} values with {}", x.len(), y.len())));
    }
    Ok(())
}

/// Fits `y ≈ a x + b` and maps `y` back onto `x`'s scale as `(y - b) / a`.
pub fn affine_align(x: &[f64], y: &[f64]) -> Result<(AlignmentFit, Vec<f64>)> {
    same_len(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("reference is constant, alignment undefined".into()));
    }
    let a = sxy / sxx;
    if a == 0.0 || !a.is_finite() {
        return Err(Error::Degenerate("estimate is uncorrelated with the reference".into()));
    }
    let fit = AlignmentFit { a, b: my - a * mx };
    Ok((fit, y.iter().map(|&v| fit.invert(v)).collect()))
}

/// Aligns each channel of `estimate` to `reference` independently.
pub fn affine_align_rgb(reference: &RgbImage, estimate: &RgbImage) -> Result<([AlignmentFit; 3], RgbImage)> {
    check_rgb(reference, estimate)?;
    let mut fits = [AlignmentFit { a: 1.0, b: 0.0 }; 3];
    let mut planes = Vec::with_capacity(3);
    for c in 0..3 {
        let (fit, aligned) = affine_align(&reference.channel(c).data, &estimate.channel(c).data)?;
        fits[c] = fit;
        planes.push(Plane::from_vec(estimate.width, estimate.height, aligned)?);
    }
    let out = RgbImage::from_channels([&planes[0], &planes[1], &planes[2]], estimate.color_space)?;
    Ok((fits, out))
}

fn mse_to_psnr(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * (mse / (peak * peak)).log10()).min(PSNR_CAP)
}

pub fn psnr(x: &[f64], y: &[f64], peak: f64) -> Result<f64> {
    same_len(x, y)?;
    let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(mse_to_psnr(mse, peak))
}

fn check_rgb(x: &RgbImage, y: &RgbImage) -> Result<()> {
    if x.width != y.width || x.height != y.height {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    Ok(())
}

pub fn psnr_rgb(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_rgb(x, y)?;
    psnr(x.pixels.as_flattened(), y.pixels.as_flattened(), 1.0)
}

/// PSNR with each pixel's squared error weighted by `mask`.
pub fn masked_psnr(x: &RgbImage, y: &RgbImage, mask: &Plane) -> Result<f64> {
    check_rgb(x, y)?;
    if mask.width != x.width || mask.height != x.height {
        return Err(Error::Shape("mask size differs from the images".into()));
    }
    if mask.data.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        return Err(Error::InvalidParameter("mask values must lie in [0, 1]".into()));
    }
    let total: f64 = mask.data.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("mask selects no pixels".into()));
    }
    let sse: f64 = x
        .pixels
        .iter()
        .zip(&y.pixels)
        .zip(&mask.data)
        .map(|((p, q), m)| m * (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(mse_to_psnr(sse / (3.0 * total), 1.0))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter keeping only fully covered positions.
fn filter_valid(p: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * p[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1,
/// averaged over positions where the window fits entirely.
pub fn ssim(x: &Plane, y: &Plane) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::Shape("SSIM inputs differ in size".into()));
    }
    if x.width < SSIM_WINDOW || x.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            x.width, x.height
        )));
    }
    let k = gaussian_window();
    let (w, h) = (x.width, x.height);
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    let mx = filter_valid(&x.data, w, h, &k);
    let my = filter_valid(&y.data, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// SSIM averaged over the three channels.
pub fn ssim_rgb(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_rgb(x, y)?;
    let mut s = 0.0;
    for c in 0..3 {
        s += ssim(&x.channel(c), &y.channel(c))?;
    }
    Ok(s / 3.0)
}

/// Aligns each of the four Bayer sites of `estimate` to `reference`
/// separately, then measures PSNR over the whole mosaic.
pub fn raw_psnr(reference: &RawImage, estimate: &RawImage) -> Result<f64> {
    if reference.bayer_pattern != estimate.bayer_pattern {
        return Err(Error::InvalidParameter("raw images use different Bayer patterns".into()));
    }
    if !reference.plane.same_shape(&estimate.plane) {
        return Err(Error::Shape("raw images differ in size".into()));
    }
    let w = reference.width();
    let mut aligned = estimate.plane.clone();
    for site in 0..4 {
        let (ox, oy) = BayerPattern::site_offset(site);
        let idx: Vec<usize> = (0..reference.plane.data.len())
            .filter(|i| i % w % 2 == ox && i / w % 2 == oy)
            .collect();
        let xs: Vec<f64> = idx.iter().map(|&i| reference.plane.data[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| estimate.plane.data[i]).collect();
        let (_, fixed) = affine_align(&xs, &ys)?;
        for (&i, v) in idx.iter().zip(fixed) {
            aligned.data[i] = v;
        }
    }
    psnr(&reference.plane.data, &aligned.data, 1.0)
}

/// One evaluated image or method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub psnr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Row-wise mean over every row that has each metric.
    pub fn mean(&self, name: &str) -> MetricsRow {
        let avg = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        MetricsRow {
            name: name.into(),
            psnr: avg(self.rows.iter().map(|r| r.psnr).collect()).unwrap_or(f64::NAN),
            ssim: avg(self.rows.iter().filter_map(|r| r.ssim).collect()),
            raw_psnr: avg(self.rows.iter().filter_map(|r| r.raw_psnr).collect()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = format!("{:<width$}  {:>8}  {:>7}  {:>8}\n", "name", "PSNR", "SSIM", "raw PSNR");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8.2}  {:>7}  {:>8}\n",
                r.name,
                r.psnr,
                r.ssim.map_or_else(|| "-".to_string(), |v| format!("{v:.4}")),
                cell(r.raw_psnr),
            ));
        }
        out
    }
}
