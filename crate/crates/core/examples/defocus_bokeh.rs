//! Slice the desk scene into a multiplane image and refocus it. Blurring the
//! linear planes before display keeps the lamp's bokeh bright; blurring an
//! already clipped rendering does not.
//!
//! Writes `defocus_hdr.png` and `defocus_ldr.png` to the temp directory.

use nalgebra::Vector3;
use rawfield::camera::{CameraMetadata, Intrinsics, Pose};
use rawfield::image::RgbImage;
use rawfield::mpi::{defocus, extract_mpi, DefocusParams, DepthRange};
use rawfield::pipeline::srgb_gamma;
use rawfield::synth::{bake_scene, SceneSpec};

fn display(img: &RgbImage, gain: f64) -> RgbImage {
    let mut out = img.map(|p| p.map(|v| srgb_gamma(v * gain)));
    out.color_space = rawfield::image::ColorSpace::Srgb;
    out
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SceneSpec::default();
    let field = bake_scene(&spec)?;
    let camera = CameraMetadata {
        white_level: 4095,
        black_level: 528,
        wb_gains: [1.0; 3],
        ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        shutter: 1.0,
        iso: 100.0,
        pose: Pose::look_at(Vector3::new(0.4, 1.0, -3.0), Vector3::zeros(), Vector3::y()),
        intrinsics: Intrinsics::pinhole(160, 120, 150.0),
    };
    let range = DepthRange { near: 1.8, far: 4.6 };
    let mpi = extract_mpi(&field, &camera, 32, range, 8)?;
    println!("{} planes, disparity {:.3}..{:.3}", mpi.len(), mpi.disparities[0], mpi.disparities[mpi.len() - 1]);

    // Focus near the front of the desk so the lamp behind it blurs.
    let params = DefocusParams {
        i_focus: 21,
        delta_r: 0.5,
        delta_d: [0.0, 0.0],
        recenter: false,
    };
    let gain = 2.0;
    let hdr = display(&defocus(&mpi, &params)?, gain);

    let mut clipped = mpi.clone();
    for c in &mut clipped.colors {
        *c = c.map(|p| p.map(|v| (v * gain).min(1.0) / gain));
    }
    let ldr = display(&defocus(&clipped, &params)?, gain);

    let bright = |img: &RgbImage| img.pixels.iter().filter(|p| p.iter().all(|&v| v > 0.99)).count();
    println!("saturated pixels: blur then clip {}, clip then blur {}", bright(&hdr), bright(&ldr));

    let dir = std::env::temp_dir();
    hdr.write_png(dir.join("defocus_hdr.png"))?;
    ldr.write_png(dir.join("defocus_ldr.png"))?;
    println!("wrote {}", dir.join("defocus_{hdr,ldr}.png").display());
    Ok(())
}
