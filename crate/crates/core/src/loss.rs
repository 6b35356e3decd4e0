//! Reconstruction losses for noisy linear data, exposure modeling, and the
//! Bayer-masked supervision used during training.
//!
//! The default loss is a squared error reweighted by the derivative of the
//! curve `psi(z) = log(z + eps)` evaluated at a detached copy of the
//! prediction. Because the weight carries no derivative, the stationary point
//! of the expected loss is the mean of the observations, so zero-mean noise
//! averages out instead of biasing the estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::same_shutter;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `((y_hat - y) / (sg(y_hat) + eps))^2`.
    #[default]
    GradientWeighted,
    /// `(log(y_hat + eps) - log(y + eps))^2`.
    Tonemapped,
    /// `(y_hat - y)^2`.
    PlainL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub variant: LossVariant,
}

fn default_eps() -> f64 {
    1e-3
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-3,
            variant: LossVariant::GradientWeighted,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Value and derivative for one prediction/observation pair.
    pub fn evaluate(&self, pred: f64, obs: f64) -> Result<(f64, f64)> {
        match self.variant {
            LossVariant::GradientWeighted => Ok(weighted_sq_error(pred, obs, self.epsilon)),
            LossVariant::Tonemapped => tonemapped_sq_error(pred, obs, self.epsilon),
            LossVariant::PlainL2 => {
                let d = pred - obs;
                Ok((d * d, 2.0 * d))
            }
        }
    }
}

/// Weighted squared error for one element. The weight `1 / (pred + eps)^2`
/// is treated as a constant when differentiating.
#[inline]
pub fn weighted_sq_error(pred: f64, obs: f64, eps: f64) -> (f64, f64) {
    let detached = pred;
    let scale = 1.0 / (detached + eps);
    let r = (pred - obs) * scale;
    (r * r, 2.0 * (pred - obs) * scale * scale)
}

/// Squared error after the log tone curve, with its true derivative.
pub fn tonemapped_sq_error(pred: f64, obs: f64, eps: f64) -> Result<(f64, f64)> {
    if !(pred + eps > 0.0) || !(obs + eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log tone curve undefined at pred={pred}, obs={obs}, eps={eps}"
        )));
    }
    let d = (pred + eps).ln() - (obs + eps).ln();
    Ok((d * d, 2.0 * d / (pred + eps)))
}

/// Sum of squared differences after the log tone curve.
pub fn tonemapped_loss(pred: &[f64], obs: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_len(pred, obs)?;
    let mut total = 0.0;
    for (&p, &o) in pred.iter().zip(obs) {
        total += tonemapped_sq_error(p, o, cfg.epsilon)?.0;
    }
    Ok(total)
}

/// Sum of weighted squared errors and the per-element gradient.
pub fn gradient_weighted_loss(pred: &[f64], obs: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_len(pred, obs)?;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(obs)
        .map(|(&p, &o)| {
            let (v, g) = weighted_sq_error(p, o, cfg.epsilon);
            total += v;
            g
        })
        .collect();
    Ok((total, grad))
}

/// Fits one value to every observation by gradient descent on the mean loss.
///
/// Each step is scaled by `(sg(x) + eps)^2 / 2`, a positive factor that makes
/// the weighted loss contract at a fixed rate without moving its fixed point.
/// Steps are also capped at half the distance to `-eps` so log curves stay
/// defined.
pub fn fit_constant(obs: &[f64], cfg: &LossConfig, init: f64, steps: usize) -> Result<f64> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::InvalidParameter("no observations to fit".into()));
    }
    let n = obs.len() as f64;
    let mut x = init;
    for _ in 0..steps {
        let mut g = 0.0;
        for &o in obs {
            g += cfg.evaluate(x, o)?.1;
        }
        let step = 0.5 * (g / n) * (x + cfg.epsilon).powi(2) / 2.0;
        x -= step.min(0.5 * (x + cfg.epsilon));
        if !x.is_finite() || x + cfg.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!("scalar fit left the valid domain at {x}")));
        }
    }
    Ok(x)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} predictions for {} observations", a.len(), b.len())));
    }
    Ok(())
}

/// Learned per-shutter, per-channel brightness scale. Stored as log scale;
/// the longest shutter stays at exactly 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureCalibration {
    pub shutters: Vec<f64>,
    pub log_alpha: Vec<[f64; 3]>,
    pub t_max: f64,
}

impl ExposureCalibration {
    pub fn new(shutters: &[f64]) -> Result<Self> {
        let mut unique: Vec<f64> = Vec::new();
        for &t in shutters {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("shutter must be positive, got {t}")));
            }
            if !unique.iter().any(|&u| same_shutter(u, t)) {
                unique.push(t);
            }
        }
        if unique.is_empty() {
            return Err(Error::InvalidParameter("no shutter times given".into()));
        }
        unique.sort_by(f64::total_cmp);
        let t_max = *unique.last().unwrap();
        Ok(ExposureCalibration {
            log_alpha: vec![[0.0; 3]; unique.len()],
            shutters: unique,
            t_max,
        })
    }

    pub fn index_of(&self, shutter: f64) -> Result<usize> {
        self.shutters
            .iter()
            .position(|&t| same_shutter(t, shutter))
            .ok_or(Error::UnknownShutter(shutter))
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        same_shutter(self.shutters[index], self.t_max)
    }

    pub fn alpha(&self, shutter: f64) -> Result<[f64; 3]> {
        let i = self.index_of(shutter)?;
        Ok(self.alpha_at(i))
    }

    pub fn alpha_at(&self, index: usize) -> [f64; 3] {
        if self.is_frozen(index) {
            return [1.0; 3];
        }
        self.log_alpha[index].map(f64::exp)
    }

    pub fn set_alpha(&mut self, shutter: f64, alpha: [f64; 3]) -> Result<()> {
        let i = self.index_of(shutter)?;
        if self.is_frozen(i) {
            return Err(Error::InvalidParameter("the longest shutter's scale is fixed at 1".into()));
        }
        self.log_alpha[i] = alpha.map(f64::ln);
        Ok(())
    }
}

/// Result of exposing one color channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exposed {
    pub value: f64,
    /// d value / d prediction.
    pub d_pred: f64,
    /// d value / d log alpha; zero when saturated or at the reference shutter.
    pub d_log_alpha: f64,
    pub saturated: bool,
}

/// `min(pred * shutter * alpha, 1)` for one channel.
pub fn expose_channel(pred: f64, channel: usize, shutter: f64, cal: &ExposureCalibration) -> Result<Exposed> {
    let idx = cal.index_of(shutter)?;
    let alpha = cal.alpha_at(idx)[channel];
    let scaled = pred * shutter * alpha;
    if scaled > 1.0 {
        return Ok(Exposed {
            value: 1.0,
            d_pred: 0.0,
            d_log_alpha: 0.0,
            saturated: true,
        });
    }
    Ok(Exposed {
        value: scaled,
        d_pred: shutter * alpha,
        d_log_alpha: if cal.is_frozen(idx) { 0.0 } else { scaled },
        saturated: false,
    })
}

/// Channelwise exposure of an HDR color.
pub fn expose(pred: [f64; 3], shutter: f64, cal: &ExposureCalibration) -> Result<[Exposed; 3]> {
    Ok([
        expose_channel(pred[0], 0, shutter, cal)?,
        expose_channel(pred[1], 1, shutter, cal)?,
        expose_channel(pred[2], 2, shutter, cal)?,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    /// d loss / d rendered color; only the active channel is nonzero.
    pub d_pred: [f64; 3],
    /// d loss / d log alpha of `(shutter index, channel)`.
    pub d_log_alpha: f64,
    pub shutter_index: usize,
    pub channel: usize,
}

/// Loss on the Bayer-active channel of a rendered color against one raw
/// measurement. Other channels contribute nothing.
pub fn bayer_masked_loss(
    pred: [f64; 3],
    obs: f64,
    channel: usize,
    shutter: f64,
    cfg: &LossConfig,
    cal: &ExposureCalibration,
) -> Result<MaskedLoss> {
    if channel > 2 {
        return Err(Error::InvalidParameter(format!("channel index {channel} out of range")));
    }
    let e = expose_channel(pred[channel], channel, shutter, cal)?;
    let (value, d_exposed) = cfg.evaluate(e.value, obs)?;
    let mut d_pred = [0.0; 3];
    d_pred[channel] = d_exposed * e.d_pred;
    Ok(MaskedLoss {
        value,
        d_pred,
        d_log_alpha: d_exposed * e.d_log_alpha,
        shutter_index: cal.index_of(shutter)?,
        channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-3;

    #[test]
    fn tonemapped_examples() {
        let cfg = LossConfig::default();
        assert_eq!(tonemapped_loss(&[0.3], &[0.3], &cfg).unwrap(), 0.0);
        let v = tonemapped_loss(&[0.1], &[0.2], &cfg).unwrap();
        let expected = (0.101f64.ln() - 0.201f64.ln()).powi(2);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.473598).abs() < 1e-6);
        assert_eq!(v, tonemapped_loss(&[0.2], &[0.1], &cfg).unwrap());
        assert!(tonemapped_loss(&[-0.5], &[0.1], &cfg).is_err());
        assert!(tonemapped_loss(&[0.1, 0.2], &[0.1], &cfg).is_err());
    }

    #[test]
    fn weighted_examples() {
        let cfg = LossConfig::default();
        let (v, g) = gradient_weighted_loss(&[0.4], &[0.4], &cfg).unwrap();
        assert_eq!((v, g[0]), (0.0, 0.0));
        let (v, g) = gradient_weighted_loss(&[0.1], &[0.2], &cfg).unwrap();
        assert!((v - (0.1f64 / 0.101).powi(2)).abs() < 1e-15);
        assert!((v - 0.980296).abs() < 1e-6);
        assert!((g[0] - (-0.2 / (0.101f64 * 0.101))).abs() < 1e-12);
        assert!((g[0] + 19.606).abs() < 1e-3);
    }

    #[test]
    fn weighted_gradient_is_stop_gradient() {
        let (p, o) = (0.37, 0.21);
        let (_, g) = weighted_sq_error(p, o, EPS);
        let h = 1e-6;
        // frozen weight
        let w = 1.0 / (p + EPS);
        let frozen = |x: f64| ((x - o) * w).powi(2);
        let fd_frozen = (frozen(p + h) - frozen(p - h)) / (2.0 * h);
        assert!(((g - fd_frozen) / fd_frozen).abs() < 1e-6);
        // the full expression differentiates the weight too and disagrees
        let full = |x: f64| ((x - o) / (x + EPS)).powi(2);
        let fd_full = (full(p + h) - full(p - h)) / (2.0 * h);
        assert!(((g - fd_full) / fd_full).abs() > 1e-2);
    }

    fn cal() -> ExposureCalibration {
        let mut c = ExposureCalibration::new(&[1.0 / 1104.0, 1.0 / 181.0]).unwrap();
        c.set_alpha(1.0 / 1104.0, [0.89, 0.93, 0.75]).unwrap();
        c
    }

    #[test]
    fn expose_examples() {
        let c = cal();
        let t_max = 1.0 / 181.0;
        assert_eq!(c.alpha(t_max).unwrap(), [1.0; 3]);
        let e = expose([10.0, 20.0, 30.0], t_max, &c).unwrap();
        assert!((e[0].value - 10.0 * t_max).abs() < 1e-15);
        assert_eq!(e[0].d_log_alpha, 0.0);

        let e = expose_channel(5.0, 1, 1.0, &ExposureCalibration::new(&[1.0]).unwrap()).unwrap();
        assert_eq!((e.value, e.d_pred, e.saturated), (1.0, 0.0, true));

        let fast = 1.0 / 1104.0;
        let e = expose_channel(1.0 / fast, 0, fast, &c).unwrap();
        assert!((e.value - 0.89).abs() < 1e-12);
        assert!(expose_channel(1.0, 0, 0.5, &c).is_err());
        assert!(c.clone().set_alpha(t_max, [2.0; 3]).is_err());
    }

    #[test]
    fn masked_loss_matches_scalar_loss() {
        let c = cal();
        let cfg = LossConfig::default();
        let t = 1.0 / 1104.0;
        let pred = [120.0, 300.0, 90.0];
        for ch in 0..3 {
            let m = bayer_masked_loss(pred, 0.05, ch, t, &cfg, &c).unwrap();
            let e = expose_channel(pred[ch], ch, t, &c).unwrap();
            let (v, g) = weighted_sq_error(e.value, 0.05, cfg.epsilon);
            assert_eq!(m.value, v);
            assert_eq!(m.d_pred[ch], g * e.d_pred);
            for other in (0..3).filter(|&o| o != ch) {
                assert_eq!(m.d_pred[other], 0.0);
                let mut bumped = pred;
                bumped[other] *= 3.0;
                assert_eq!(bayer_masked_loss(bumped, 0.05, ch, t, &cfg, &c).unwrap(), m);
            }
        }
        assert!(bayer_masked_loss(pred, 0.05, 3, t, &cfg, &c).is_err());
    }

    #[test]
    fn rggb_quad_batch() {
        // four rays covering one RGGB quad: R, G, G, B
        let c = ExposureCalibration::new(&[1.0]).unwrap();
        let cfg = LossConfig::default();
        let pred = [[0.2, 0.5, 0.7], [0.21, 0.52, 0.69], [0.19, 0.47, 0.71], [0.2, 0.5, 0.72]];
        let obs = [0.25, 0.45, 0.55, 0.6];
        let chans = [0, 1, 1, 2];
        let mut total = 0.0;
        let mut expected = 0.0;
        let mut seen = [0; 3];
        for k in 0..4 {
            let m = bayer_masked_loss(pred[k], obs[k], chans[k], 1.0, &cfg, &c).unwrap();
            total += m.value;
            seen[m.channel] += 1;
            expected += ((pred[k][chans[k]] - obs[k]) / (pred[k][chans[k]] + EPS)).powi(2);
        }
        assert_eq!(seen, [1, 2, 1]);
        assert!((total - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_fit_lands_on_the_mean() {
        let obs = [0.02, -0.01, 0.05, 0.0, 0.03];
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let x = fit_constant(&obs, &LossConfig::default(), 0.5, 80).unwrap();
        assert!((x - mean).abs() < 1e-12);
    }

    #[test]
    fn tonemapped_constant_fit_is_the_geometric_mean() {
        let cfg = LossConfig {
            variant: LossVariant::Tonemapped,
            ..Default::default()
        };
        let obs = [0.0, 0.01, 0.1];
        let geo = (obs.iter().map(|o| (o + EPS).ln()).sum::<f64>() / 3.0).exp() - EPS;
        let x = fit_constant(&obs, &cfg, 0.5, 200).unwrap();
        assert!((x - geo).abs() < 1e-12, "{x} {geo}");
        assert!(fit_constant(&[-0.5], &cfg, 0.1, 1).is_err());
        assert!(fit_constant(&[], &cfg, 0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn weighted_zero_grad_iff_equal(p in 0.0f64..5.0, o in 0.0f64..5.0) {
            let (_, g) = weighted_sq_error(p, o, EPS);
            prop_assert_eq!(g == 0.0, p == o);
            prop_assert!(g.signum() == (p - o).signum() || g == 0.0);
        }

        #[test]
        fn expose_is_monotone(a in 0.0f64..500.0, b in 0.0f64..500.0, ch in 0usize..3) {
            let c = cal();
            let t = 1.0 / 1104.0;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(expose_channel(lo, ch, t, &c).unwrap().value <= expose_channel(hi, ch, t, &c).unwrap().value);
        }
    }
}
