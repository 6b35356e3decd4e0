//! Camera postprocessing (raw to display sRGB) and its inverse.
//!
//! Forward steps, in order: black/white normalization, bilinear demosaic,
//! white balance, combined color transform, exposure rescale, clip, sRGB gamma.
//! Everything before the clip is linear and keeps negative values.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{mat3, BayerPattern, CameraMetadata};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, Plane, RgbImage};

/// Linear sRGB primaries to XYZ (D65).
pub const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Divisor floor for the percentile exposure step.
pub const EXPOSURE_FLOOR: f64 = 1e-12;

/// Mosaicked single-channel raw measurement, normalized so black is 0 and
/// white is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub plane: Plane,
    pub bayer_pattern: BayerPattern,
    pub meta: CameraMetadata,
}

impl RawImage {
    pub fn new(plane: Plane, bayer_pattern: BayerPattern, meta: CameraMetadata) -> Result<Self> {
        check_even(plane.width, plane.height)?;
        if !plane.is_finite() {
            return Err(Error::InvalidParameter("raw plane contains non-finite values".into()));
        }
        Ok(RawImage {
            plane,
            bayer_pattern,
            meta,
        })
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    #[inline]
    pub fn channel_at(&self, x: usize, y: usize) -> usize {
        self.bayer_pattern.channel_at(x, y)
    }
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::Shape(format!(
            "Bayer data needs even, nonzero dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Percentile mapped to white during exposure adjustment.
    #[serde(default = "default_percentile")]
    pub exposure_percentile: f64,
    /// Fixed exposure multiplier; when set it replaces the percentile rescale.
    #[serde(default)]
    pub manual_gain: Option<f64>,
    /// When false, missing channels are left at zero instead of interpolated.
    #[serde(default = "default_true")]
    pub apply_demosaic: bool,
}

fn default_percentile() -> f64 {
    97.0
}

fn default_true() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            exposure_percentile: 97.0,
            manual_gain: None,
            apply_demosaic: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_percentile > 0.0 && self.exposure_percentile <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "exposure percentile must be in (0, 100], got {}",
                self.exposure_percentile
            )));
        }
        if let Some(g) = self.manual_gain {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::InvalidParameter(format!("manual gain must be positive, got {g}")));
            }
        }
        Ok(())
    }

    pub fn with_gain(gain: f64) -> Self {
        PipelineConfig {
            manual_gain: Some(gain),
            ..Default::default()
        }
    }
}

/// Maps digital numbers to `(dn - black) / (white - black)`.
pub fn normalize_raw(
    dn: &[u32],
    width: usize,
    height: usize,
    bayer_pattern: BayerPattern,
    meta: &CameraMetadata,
) -> Result<RawImage> {
    meta.validate()?;
    if dn.len() != width * height {
        return Err(Error::Shape(format!(
            "expected {} digital numbers, got {}",
            width * height,
            dn.len()
        )));
    }
    let black = meta.black_level as f64;
    let range = (meta.white_level - meta.black_level) as f64;
    let data = dn.iter().map(|&v| (v as f64 - black) / range).collect();
    RawImage::new(Plane::from_vec(width, height, data)?, bayer_pattern, meta.clone())
}

/// Keeps only the Bayer-active channel of every pixel.
pub fn mosaic(img: &RgbImage, pattern: BayerPattern) -> Result<Plane> {
    img.expect_space(ColorSpace::CameraRGB)?;
    check_even(img.width, img.height)?;
    Ok(Plane::from_fn(img.width, img.height, |x, y| {
        img.get(x, y)[pattern.channel_at(x, y)]
    }))
}

/// Reflects an out-of-range coordinate by two pixels so the Bayer parity is
/// kept. Within a 3x3 neighborhood this is the same as edge-replicating each
/// color's subsampled plane.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Bilinear demosaic. Measured samples pass through unchanged; missing
/// channels average the nearest same-channel neighbors (4-neighborhood for
/// green, horizontal/vertical pairs or diagonals for red and blue).
pub fn demosaic_bilinear(raw: &RawImage) -> RgbImage {
    let (w, h) = (raw.width(), raw.height());
    let pattern = raw.bayer_pattern;
    let at = |x: isize, y: isize| raw.plane.get(reflect(x, w), reflect(y, h));
    let chan = |x: isize, y: isize| pattern.channel_at(reflect(x, w), reflect(y, h));

    RgbImage::from_fn(w, h, ColorSpace::CameraRGB, |x, y| {
        let (xi, yi) = (x as isize, y as isize);
        let here = pattern.channel_at(x, y);
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            if c == here {
                *slot = raw.plane.get(x, y);
                continue;
            }
            let candidates: &[(isize, isize)] = if c == 1 {
                &[(-1, 0), (1, 0), (0, -1), (0, 1)]
            } else if chan(xi - 1, yi) == c {
                &[(-1, 0), (1, 0)]
            } else if chan(xi, yi - 1) == c {
                &[(0, -1), (0, 1)]
            } else {
                &[(-1, -1), (1, -1), (-1, 1), (1, 1)]
            };
            let mut sum = 0.0;
            for &(dx, dy) in candidates {
                debug_assert_eq!(chan(xi + dx, yi + dy), c);
                sum += at(xi + dx, yi + dy);
            }
            *slot = sum / candidates.len() as f64;
        }
        out
    })
}

/// Places each measured value in its own channel, leaving the others at zero.
pub fn mosaic_to_rgb(raw: &RawImage) -> RgbImage {
    RgbImage::from_fn(raw.width(), raw.height(), ColorSpace::CameraRGB, |x, y| {
        let mut p = [0.0; 3];
        p[raw.channel_at(x, y)] = raw.plane.get(x, y);
        p
    })
}

fn check_gains(gains: [f64; 3]) -> Result<()> {
    if gains.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "white balance gains must be positive, got {gains:?}"
        )));
    }
    Ok(())
}

/// Divides every channel by its gain.
pub fn white_balance(img: &RgbImage, gains: [f64; 3]) -> Result<RgbImage> {
    img.expect_space(ColorSpace::CameraRGB)?;
    check_gains(gains)?;
    Ok(img.map(|p| [p[0] / gains[0], p[1] / gains[1], p[2] / gains[2]]))
}

/// `rownorm((RGB_TO_XYZ * ccm)^-1)`: camera RGB straight to linear RGB.
pub fn build_color_transform(ccm: &[[f64; 3]; 3]) -> Result<Matrix3<f64>> {
    let product = mat3(&RGB_TO_XYZ) * mat3(ccm);
    let inv = product
        .try_inverse()
        .ok_or(Error::SingularMatrix("rgb-to-xyz times color matrix"))?;
    let mut out = inv;
    for r in 0..3 {
        let sum: f64 = (0..3).map(|c| inv[(r, c)]).sum();
        if sum.abs() < 1e-15 {
            return Err(Error::SingularMatrix("color transform row sums to zero"));
        }
        for c in 0..3 {
            out[(r, c)] = inv[(r, c)] / sum;
        }
    }
    Ok(out)
}

pub fn apply_matrix(m: &Matrix3<f64>, p: [f64; 3]) -> [f64; 3] {
    let v = m * Vector3::from(p);
    [v.x, v.y, v.z]
}

/// Applies the color transform to a white-balanced camera image.
pub fn color_correct(img: &RgbImage, c_all: &Matrix3<f64>) -> Result<RgbImage> {
    img.expect_space(ColorSpace::CameraRGB)?;
    let mut out = img.map(|p| apply_matrix(c_all, p));
    out.color_space = ColorSpace::LinearRGB;
    Ok(out)
}

/// Standard sRGB transfer curve. Inputs are clamped to [0, 1] first.
pub fn srgb_gamma(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    if z <= 0.0031308 {
        12.92 * z
    } else {
        1.055 * z.powf(1.0 / 2.4) - 0.055
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Multiplier the exposure step will apply to a linear RGB image.
/// The percentile is taken over all three channels jointly.
pub fn exposure_gain(img: &RgbImage, cfg: &PipelineConfig) -> f64 {
    match cfg.manual_gain {
        Some(g) => g,
        None => {
            let flat: Vec<f64> = img.pixels.iter().flatten().copied().collect();
            1.0 / percentile(&flat, cfg.exposure_percentile).max(EXPOSURE_FLOOR)
        }
    }
}

/// Exposure, clip and gamma on a linear RGB image.
pub fn tonemap(img: &RgbImage, gain: f64) -> Result<RgbImage> {
    img.expect_space(ColorSpace::LinearRGB)?;
    let mut out = img.map(|p| p.map(|v| srgb_gamma((v * gain).clamp(0.0, 1.0))));
    out.color_space = ColorSpace::Srgb;
    Ok(out)
}

/// White balance and color transform: camera RGB to linear RGB.
pub fn camera_to_linear(img: &RgbImage, meta: &CameraMetadata) -> Result<RgbImage> {
    let c_all = build_color_transform(&meta.ccm)?;
    color_correct(&white_balance(img, meta.wb_gains)?, &c_all)
}

/// Steps 5 onward for an image that already has three channels.
pub fn postprocess_rgb(img: &RgbImage, meta: &CameraMetadata, cfg: &PipelineConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let linear = camera_to_linear(img, meta)?;
    let gain = exposure_gain(&linear, cfg);
    tonemap(&linear, gain)
}

/// Full raw to display sRGB conversion.
pub fn postprocess(raw: &RawImage, cfg: &PipelineConfig) -> Result<RgbImage> {
    let rgb = if cfg.apply_demosaic {
        demosaic_bilinear(raw)
    } else {
        mosaic_to_rgb(raw)
    };
    postprocess_rgb(&rgb, &raw.meta, cfg)
}

/// Inverse of white balance and color transform, without mosaicking.
pub fn unprocess_rgb(img: &RgbImage, meta: &CameraMetadata) -> Result<RgbImage> {
    img.expect_space(ColorSpace::LinearRGB)?;
    check_gains(meta.wb_gains)?;
    let inv = build_color_transform(&meta.ccm)?
        .try_inverse()
        .ok_or(Error::SingularMatrix("combined color transform"))?;
    let g = meta.wb_gains;
    let mut out = img.map(|p| {
        let c = apply_matrix(&inv, p);
        [c[0] * g[0], c[1] * g[1], c[2] * g[2]]
    });
    out.color_space = ColorSpace::CameraRGB;
    Ok(out)
}

/// Linear HDR RGB to a clean raw mosaic. No gamma, clipping or quantization.
pub fn unprocess(img: &RgbImage, meta: &CameraMetadata, pattern: BayerPattern) -> Result<RawImage> {
    let camera = unprocess_rgb(img, meta)?;
    RawImage::new(mosaic(&camera, pattern)?, pattern, meta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use proptest::prelude::*;

    fn meta() -> CameraMetadata {
        CameraMetadata {
            white_level: 4095,
            black_level: 528,
            wb_gains: [0.5, 1.0, 0.6],
            ccm: [[1.2, -0.2, 0.05], [-0.3, 1.4, 0.1], [0.05, -0.1, 0.9]],
            shutter: 0.1,
            iso: 100.0,
            pose: Pose::default(),
            intrinsics: Intrinsics::pinhole(4, 4, 4.0),
        }
    }

    fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    fn inverse_rgb_to_xyz() -> [[f64; 3]; 3] {
        rows(&mat3(&RGB_TO_XYZ).try_inverse().unwrap())
    }

    #[test]
    fn normalize_maps_levels() {
        let m = meta();
        let raw = normalize_raw(&[528, 4095, 2311, 0], 2, 2, BayerPattern::RGGB, &m).unwrap();
        assert_eq!(raw.plane.data[0], 0.0);
        assert_eq!(raw.plane.data[1], 1.0);
        assert!((raw.plane.data[2] - 1783.0 / 3567.0).abs() < 1e-15);
        assert!((raw.plane.data[2] - 0.499860).abs() < 1e-6);
        // below black stays negative
        assert!(raw.plane.data[3] < 0.0);
    }

    #[test]
    fn normalize_rejects_bad_levels() {
        let mut m = meta();
        m.white_level = 100;
        m.black_level = 100;
        let err = normalize_raw(&[0; 4], 2, 2, BayerPattern::RGGB, &m).unwrap_err();
        assert!(matches!(err, Error::InvalidMetadata(_)));
    }

    #[test]
    fn mosaic_constant_quads() {
        let img = RgbImage::filled(4, 2, [0.2, 0.5, 0.7], ColorSpace::CameraRGB);
        let p = mosaic(&img, BayerPattern::RGGB).unwrap();
        assert_eq!(p.data, vec![0.2, 0.5, 0.2, 0.5, 0.5, 0.7, 0.5, 0.7]);
    }

    #[test]
    fn mosaic_rejects_odd_and_wrong_space() {
        let img = RgbImage::filled(3, 2, [0.0; 3], ColorSpace::CameraRGB);
        assert!(matches!(mosaic(&img, BayerPattern::RGGB), Err(Error::Shape(_))));
        let img = RgbImage::filled(2, 2, [0.0; 3], ColorSpace::LinearRGB);
        assert!(matches!(mosaic(&img, BayerPattern::RGGB), Err(Error::ColorSpace { .. })));
    }

    #[test]
    fn demosaic_constant_image() {
        for pattern in [BayerPattern::RGGB, BayerPattern::BGGR, BayerPattern::GRBG, BayerPattern::GBRG] {
            let img = RgbImage::filled(6, 4, [0.2, 0.5, 0.7], ColorSpace::CameraRGB);
            let raw = RawImage::new(mosaic(&img, pattern).unwrap(), pattern, meta()).unwrap();
            let back = demosaic_bilinear(&raw);
            for p in &back.pixels {
                for c in 0..3 {
                    assert!((p[c] - [0.2, 0.5, 0.7][c]).abs() < 1e-15);
                }
            }
            let flat = RawImage::new(Plane::filled(6, 4, 0.3), pattern, meta()).unwrap();
            assert!(demosaic_bilinear(&flat)
                .pixels
                .iter()
                .flatten()
                .all(|&v| (v - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn demosaic_green_ramp_interior() {
        let w = 8;
        let img = RgbImage::from_fn(w, 6, ColorSpace::CameraRGB, |x, _| [0.0, 0.1 * x as f64, 0.0]);
        let raw = RawImage::new(mosaic(&img, BayerPattern::RGGB).unwrap(), BayerPattern::RGGB, meta()).unwrap();
        let out = demosaic_bilinear(&raw);
        for y in 1..5 {
            for x in 1..w - 1 {
                assert!((out.get(x, y)[1] - 0.1 * x as f64).abs() < 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn demosaic_minimal_quad_uses_replicated_neighbors() {
        // RGGB 2x2: R=1, G1=2, G2=4, B=8
        let raw = RawImage::new(
            Plane::from_vec(2, 2, vec![1.0, 2.0, 4.0, 8.0]).unwrap(),
            BayerPattern::RGGB,
            meta(),
        )
        .unwrap();
        let out = demosaic_bilinear(&raw);
        // every missing red is the lone red sample, every missing blue the lone blue
        assert_eq!(out.get(0, 0), [1.0, 3.0, 8.0]);
        assert_eq!(out.get(1, 0), [1.0, 2.0, 8.0]);
        assert_eq!(out.get(0, 1), [1.0, 4.0, 8.0]);
        assert_eq!(out.get(1, 1), [1.0, 3.0, 8.0]);
    }

    #[test]
    fn white_balance_examples() {
        let img = RgbImage::filled(2, 2, [0.4, 0.4, 0.4], ColorSpace::CameraRGB);
        assert_eq!(white_balance(&img, [1.0, 1.0, 1.0]).unwrap(), img);
        assert_eq!(white_balance(&img, [2.0, 1.0, 1.0]).unwrap().get(0, 0), [0.2, 0.4, 0.4]);
        assert!(white_balance(&img, [1.0, 0.0, 1.0]).is_err());
        assert!(white_balance(&img, [1.0, -1.0, 1.0]).is_err());
        let g = [0.37, 1.3, 2.9];
        let wb = white_balance(&img, g).unwrap();
        let back = wb.map(|p| [p[0] * g[0], p[1] * g[1], p[2] * g[2]]);
        for (a, b) in back.pixels.iter().flatten().zip(img.pixels.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn color_transform_identity_cases() {
        let inv = inverse_rgb_to_xyz();
        let c = build_color_transform(&inv).unwrap();
        assert!((c - Matrix3::identity()).abs().max() < 1e-9);

        let doubled = rows(&(mat3(&inv) * 2.0));
        let c = build_color_transform(&doubled).unwrap();
        assert!((c - Matrix3::identity()).abs().max() < 1e-9);

        let c = build_color_transform(&meta().ccm).unwrap();
        for r in 0..3 {
            let s: f64 = (0..3).map(|k| c[(r, k)]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(build_color_transform(&[[0.0; 3]; 3]).is_err());
    }

    #[test]
    fn gamma_endpoints_and_knee() {
        assert_eq!(srgb_gamma(0.0), 0.0);
        assert!((srgb_gamma(1.0) - 1.0).abs() < 1e-15);
        let knee = 0.0031308;
        assert!((srgb_gamma(knee) - 0.040450).abs() < 1e-6);
        let upper = 1.055 * knee.powf(1.0 / 2.4) - 0.055;
        assert!((upper - 12.92 * knee).abs() < 3e-5);
        assert_eq!(srgb_gamma(-0.5), 0.0);
        assert!((srgb_gamma(7.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 97.0) - 4.88).abs() < 1e-12);
    }

    #[test]
    fn postprocess_zero_raw_is_black() {
        let raw = RawImage::new(Plane::new(4, 4), BayerPattern::RGGB, meta()).unwrap();
        let out = postprocess(&raw, &PipelineConfig::default()).unwrap();
        assert_eq!(out.color_space, ColorSpace::Srgb);
        assert!(out.pixels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn postprocess_caps_at_one() {
        let raw = RawImage::new(
            Plane::from_fn(4, 4, |x, y| (x + 4 * y) as f64 * 0.1),
            BayerPattern::RGGB,
            meta(),
        )
        .unwrap();
        let out = postprocess(&raw, &PipelineConfig::default()).unwrap();
        let max = out.pixels.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        assert!(max <= 1.0);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unprocess_identity_is_mosaic() {
        let mut m = meta();
        m.ccm = inverse_rgb_to_xyz();
        m.wb_gains = [1.0; 3];
        let img = RgbImage::from_fn(4, 4, ColorSpace::LinearRGB, |x, y| [x as f64, y as f64, 0.5]);
        let raw = unprocess(&img, &m, BayerPattern::RGGB).unwrap();
        let mut cam = img.clone();
        cam.color_space = ColorSpace::CameraRGB;
        let expected = mosaic(&cam, BayerPattern::RGGB).unwrap();
        for (a, b) in raw.plane.data.iter().zip(&expected.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unprocess_inverts_color_steps() {
        let m = meta();
        let img = RgbImage::from_fn(4, 4, ColorSpace::LinearRGB, |x, y| {
            [0.1 + x as f64, 0.3 * y as f64, 12.0]
        });
        let cam = unprocess_rgb(&img, &m).unwrap();
        let back = camera_to_linear(&cam, &m).unwrap();
        for (a, b) in back.pixels.iter().flatten().zip(img.pixels.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let doubled = unprocess_rgb(&img.map(|p| p.map(|v| 2.0 * v)), &m).unwrap();
        for (a, b) in doubled.pixels.iter().flatten().zip(cam.pixels.iter().flatten()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn unprocess_rejects_wrong_space() {
        let img = RgbImage::filled(2, 2, [1.0; 3], ColorSpace::CameraRGB);
        assert!(unprocess(&img, &meta(), BayerPattern::RGGB).is_err());
    }

    #[test]
    fn pipeline_config_validation() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.exposure_percentile = 0.0;
        assert!(cfg.validate().is_err());
        cfg.exposure_percentile = 100.5;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn gamma_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(srgb_gamma(lo) <= srgb_gamma(hi));
        }

        #[test]
        fn demosaic_keeps_measured_sites(values in proptest::collection::vec(-0.1f64..2.0, 36)) {
            let raw = RawImage::new(Plane::from_vec(6, 6, values).unwrap(), BayerPattern::GBRG, meta()).unwrap();
            let rgb = demosaic_bilinear(&raw);
            let again = mosaic(&rgb, BayerPattern::GBRG).unwrap();
            prop_assert_eq!(again.data, raw.plane.data);
        }

        #[test]
        fn pre_clip_steps_are_linear(s in 0.01f64..100.0, v in 0.0f64..1.0) {
            let m = meta();
            let img = RgbImage::filled(2, 2, [v, 0.5 * v, 0.25], ColorSpace::CameraRGB);
            let scaled = img.map(|p| p.map(|x| x * s));
            let a = camera_to_linear(&img, &m).unwrap();
            let b = camera_to_linear(&scaled, &m).unwrap();
            for (x, y) in a.pixels.iter().flatten().zip(b.pixels.iter().flatten()) {
                prop_assert!((x * s - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
