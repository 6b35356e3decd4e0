//! Unprocess a linear RGB image into a raw mosaic, add sensor noise, and
//! develop it back to display sRGB.
//!
//! ```text
//! cargo run --release --example isp_roundtrip
//! ```

use nalgebra::Vector3;
use rawfield::camera::{BayerPattern, CameraMetadata, Intrinsics, Pose};
use rawfield::image::{ColorSpace, RgbImage};
use rawfield::metrics::psnr_rgb;
use rawfield::noise::{sample_noise, NoiseParams};
use rawfield::pipeline::{postprocess, tonemap, unprocess, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = CameraMetadata {
        white_level: 4095,
        black_level: 528,
        wb_gains: [2.1, 1.0, 1.7],
        ccm: [[1.7, -0.5, -0.2], [-0.25, 1.45, -0.2], [0.0, -0.6, 1.6]],
        shutter: 1.0,
        iso: 100.0,
        pose: Pose::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::y()),
        intrinsics: Intrinsics::pinhole(96, 64, 80.0),
    };

    // A smooth gradient with a bright patch that will clip on display.
    let linear = RgbImage::from_fn(96, 64, ColorSpace::LinearRGB, |x, y| {
        let u = x as f64 / 95.0;
        let v = y as f64 / 63.0;
        let lamp = if (40..56).contains(&x) && (24..40).contains(&y) { 4.0 } else { 0.0 };
        [0.05 + 0.6 * u + lamp, 0.1 + 0.4 * v + lamp, 0.3 * (1.0 - u) + lamp]
    });

    let raw = unprocess(&linear, &meta, BayerPattern::RGGB)?;
    let cfg = PipelineConfig {
        exposure_percentile: 100.0,
        manual_gain: Some(1.0),
        ..Default::default()
    };
    let reference = tonemap(&linear, 1.0)?;
    let clean = postprocess(&raw, &cfg)?;
    println!("noiseless, demosaic error only: {:.1} dB", psnr_rgb(&reference, &clean)?);

    for (label, params) in [
        ("bright", NoiseParams::new(1e-4, 1e-6)?),
        ("dim", NoiseParams::new(1e-3, 1e-5)?),
        ("dark", NoiseParams::new(1e-2, 1e-4)?),
    ] {
        let mut noisy = raw.clone();
        noisy.plane = sample_noise(&raw.plane, params, 7)?;
        let developed = postprocess(&noisy, &cfg)?;
        println!("{label:>6}: {:.1} dB after development", psnr_rgb(&reference, &developed)?);
    }

    let out = std::env::temp_dir().join("isp_roundtrip.png");
    clean.write_png(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
