//! Shot/read sensor noise and shutter-speed miscalibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::pipeline::RawImage;

/// Noise variance at clean level `x` is `shot * max(x, 0) + read`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub shot: f64,
    pub read: f64,
}

impl NoiseParams {
    pub fn new(shot: f64, read: f64) -> Result<Self> {
        let p = NoiseParams { shot, read };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shot >= 0.0 && self.read >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise parameters must be nonnegative, got shot={} read={}",
                self.shot, self.read
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn variance(&self, x: f64) -> f64 {
        self.shot * x.max(0.0) + self.read
    }

    pub fn is_noiseless(&self) -> bool {
        self.shot == 0.0 && self.read == 0.0
    }
}

/// Adds zero-mean Gaussian noise with signal-dependent variance.
///
/// Each row draws from its own ChaCha stream keyed by `(seed, row)`, so the
/// output does not depend on how rows are scheduled across threads.
pub fn sample_noise(x: &Plane, params: NoiseParams, seed: u64) -> Result<Plane> {
    params.validate()?;
    if !x.is_finite() {
        return Err(Error::InvalidParameter("clean plane contains non-finite values".into()));
    }
    if params.is_noiseless() {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    out.data
        .par_chunks_mut(x.width)
        .enumerate()
        .for_each(|(row, values)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            for v in values.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += z * params.variance(*v).sqrt();
            }
        });
    Ok(out)
}

pub const FIT_BINS: usize = 32;
pub const FIT_MIN_PER_BIN: usize = 100;

/// Least-squares affine fit of binned residual variance against clean level.
pub fn fit_noise_params(pairs: &[(&Plane, &Plane)]) -> Result<NoiseParams> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (clean, noisy) in pairs {
        if !clean.same_shape(noisy) {
            return Err(Error::Shape("clean and noisy planes differ in size".into()));
        }
        for &v in &clean.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi > lo) {
        return Err(Error::Degenerate(
            "need at least two distinct clean levels to fit noise".into(),
        ));
    }

    let mut count = [0usize; FIT_BINS];
    let mut sum_x = [0.0; FIT_BINS];
    let mut sum_r = [0.0; FIT_BINS];
    let mut sum_r2 = [0.0; FIT_BINS];
    let width = hi - lo;
    for (clean, noisy) in pairs {
        for (&x, &y) in clean.data.iter().zip(&noisy.data) {
            let b = (((x - lo) / width) * FIT_BINS as f64) as usize;
            let b = b.min(FIT_BINS - 1);
            let r = y - x;
            count[b] += 1;
            sum_x[b] += x;
            sum_r[b] += r;
            sum_r2[b] += r * r;
        }
    }

    let points: Vec<(f64, f64)> = (0..FIT_BINS)
        .filter(|&b| count[b] >= FIT_MIN_PER_BIN)
        .map(|b| {
            let n = count[b] as f64;
            let mean_r = sum_r[b] / n;
            let var = (sum_r2[b] - n * mean_r * mean_r) / (n - 1.0);
            (sum_x[b] / n, var.max(0.0))
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} bin(s) with at least {FIT_MIN_PER_BIN} pixels",
            points.len()
        )));
    }

    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("binned clean levels are identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(NoiseParams {
        shot: slope.max(0.0),
        read: intercept.max(0.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiscalibrationEntry {
    pub shutter: f64,
    pub alpha: [f64; 3],
}

/// Per-shutter, per-channel brightness scale a sensor applies on top of the
/// ideal `signal * shutter` response. The longest shutter is the reference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiscalibrationTable {
    pub entries: Vec<MiscalibrationEntry>,
}

pub(crate) fn same_shutter(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl MiscalibrationTable {
    /// Builds a table; the longest shutter must map to exactly 1 per channel.
    pub fn new(entries: Vec<MiscalibrationEntry>) -> Result<Self> {
        let table = MiscalibrationTable { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(longest) = self
            .entries
            .iter()
            .max_by(|a, b| a.shutter.total_cmp(&b.shutter))
        else {
            return Ok(());
        };
        if longest.alpha != [1.0; 3] {
            return Err(Error::InvalidParameter(format!(
                "longest shutter {} must have unit scale, got {:?}",
                longest.shutter, longest.alpha
            )));
        }
        for e in &self.entries {
            if !(e.shutter > 0.0) || e.alpha.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::InvalidParameter(format!("bad miscalibration entry {e:?}")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, shutter: f64) -> Result<[f64; 3]> {
        self.entries
            .iter()
            .find(|e| same_shutter(e.shutter, shutter))
            .map(|e| e.alpha)
            .ok_or(Error::UnknownShutter(shutter))
    }
}

/// Scales every Bayer site by the miscalibration of its channel.
pub fn apply_miscalibration(raw: &RawImage, table: &MiscalibrationTable) -> Result<RawImage> {
    let alpha = table.alpha(raw.meta.shutter)?;
    let mut out = raw.clone();
    let w = raw.width();
    for (i, v) in out.plane.data.iter_mut().enumerate() {
        *v *= alpha[raw.channel_at(i % w, i / w)];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{BayerPattern, CameraMetadata, Intrinsics, Pose};

    fn meta(shutter: f64) -> CameraMetadata {
        CameraMetadata {
            white_level: 4095,
            black_level: 528,
            wb_gains: [1.0; 3],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            shutter,
            iso: 100.0,
            pose: Pose::default(),
            intrinsics: Intrinsics::pinhole(4, 4, 4.0),
        }
    }

    #[test]
    fn noiseless_is_identity() {
        let x = Plane::from_fn(8, 4, |x, y| x as f64 * 0.1 - y as f64);
        assert_eq!(sample_noise(&x, NoiseParams::default(), 3).unwrap(), x);
        assert!(sample_noise(&x, NoiseParams { shot: -1.0, read: 0.0 }, 3).is_err());
    }

    #[test]
    fn noise_moments_at_half() {
        let n = 100_000;
        let x = Plane::filled(1000, 100, 0.5);
        let p = NoiseParams::new(0.01, 0.001).unwrap();
        let y = sample_noise(&x, p, 11).unwrap();
        let mean = y.mean();
        let var = y.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 0.5).abs() < 3.0 * (0.006f64 / n as f64).sqrt());
        assert!((var - 0.006).abs() < 0.05 * 0.006, "var {var}");
    }

    #[test]
    fn same_seed_same_noise() {
        let x = Plane::filled(64, 64, 0.2);
        let p = NoiseParams::new(0.02, 0.0005).unwrap();
        let a = sample_noise(&x, p, 99).unwrap();
        let b = sample_noise(&x, p, 99).unwrap();
        let c = sample_noise(&x, p, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_signal_gets_read_noise_only() {
        let p = NoiseParams::new(10.0, 0.01).unwrap();
        assert_eq!(p.variance(-3.0), 0.01);
    }

    #[test]
    fn fit_recovers_parameters() {
        let (w, h) = (1000, 1000);
        let clean = Plane::from_fn(w, h, |x, _| x as f64 / (w - 1) as f64);
        let truth = NoiseParams::new(0.01, 0.001).unwrap();
        let noisy = sample_noise(&clean, truth, 5).unwrap();
        let fit = fit_noise_params(&[(&clean, &noisy)]).unwrap();
        assert!((fit.shot - 0.01).abs() < 0.1 * 0.01, "{fit:?}");
        assert!((fit.read - 0.001).abs() < 0.1 * 0.001, "{fit:?}");
    }

    #[test]
    fn fit_pure_read_noise_has_flat_slope() {
        let clean = Plane::from_fn(1000, 500, |x, _| x as f64 / 999.0);
        let noisy = sample_noise(&clean, NoiseParams::new(0.0, 0.002).unwrap(), 8).unwrap();
        let fit = fit_noise_params(&[(&clean, &noisy)]).unwrap();
        assert!(fit.shot < 0.1 * 0.002, "{fit:?}");
        assert!((fit.read - 0.002).abs() < 0.1 * 0.002);
    }

    #[test]
    fn fit_noiseless_and_degenerate() {
        let clean = Plane::from_fn(100, 100, |x, _| x as f64 / 99.0);
        let fit = fit_noise_params(&[(&clean, &clean)]).unwrap();
        assert_eq!(fit, NoiseParams { shot: 0.0, read: 0.0 });
        let flat = Plane::filled(100, 100, 0.3);
        assert!(matches!(
            fit_noise_params(&[(&flat, &flat)]),
            Err(Error::Degenerate(_))
        ));
    }

    fn table() -> MiscalibrationTable {
        MiscalibrationTable::new(vec![
            MiscalibrationEntry {
                shutter: 1.0 / 181.0,
                alpha: [1.0; 3],
            },
            MiscalibrationEntry {
                shutter: 1.0 / 1104.0,
                alpha: [0.89, 0.93, 0.75],
            },
        ])
        .unwrap()
    }

    #[test]
    fn miscalibration_scales_active_channel() {
        let raw = RawImage::new(Plane::filled(4, 4, 1.0), BayerPattern::RGGB, meta(1.0 / 1104.0)).unwrap();
        let out = apply_miscalibration(&raw, &table()).unwrap();
        assert_eq!(out.plane.get(0, 0), 0.89);
        assert_eq!(out.plane.get(1, 0), 0.93);
        assert_eq!(out.plane.get(0, 1), 0.93);
        assert_eq!(out.plane.get(1, 1), 0.75);

        let slow = RawImage::new(Plane::filled(4, 4, 0.7), BayerPattern::RGGB, meta(1.0 / 181.0)).unwrap();
        assert_eq!(apply_miscalibration(&slow, &table()).unwrap(), slow);

        let unknown = RawImage::new(Plane::filled(4, 4, 0.7), BayerPattern::RGGB, meta(0.5)).unwrap();
        assert!(matches!(
            apply_miscalibration(&unknown, &table()),
            Err(Error::UnknownShutter(_))
        ));
    }

    #[test]
    fn miscalibration_inverse() {
        let raw = RawImage::new(
            Plane::from_fn(4, 4, |x, y| 0.1 + (x * y) as f64),
            BayerPattern::BGGR,
            meta(1.0 / 1104.0),
        )
        .unwrap();
        let out = apply_miscalibration(&raw, &table()).unwrap();
        let alpha = [0.89, 0.93, 0.75];
        for y in 0..4 {
            for x in 0..4 {
                let back = out.plane.get(x, y) / alpha[raw.channel_at(x, y)];
                assert!((back - raw.plane.get(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn longest_shutter_must_be_unit() {
        let bad = MiscalibrationTable::new(vec![MiscalibrationEntry {
            shutter: 1.0,
            alpha: [0.9, 1.0, 1.0],
        }]);
        assert!(bad.is_err());
    }
}
