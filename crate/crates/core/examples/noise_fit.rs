//! Recover shot and read noise parameters from clean/noisy raw pairs.

use rawfield::image::Plane;
use rawfield::noise::{fit_noise_params, sample_noise, NoiseParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = NoiseParams::new(2e-3, 4e-5)?;
    // A ramp covering the sensor range, repeated so each level has many samples.
    let clean = Plane::from_fn(512, 256, |x, _| x as f64 / 511.0);
    let noisy: Vec<Plane> = (0..4).map(|k| sample_noise(&clean, truth, k)).collect::<Result<_, _>>()?;
    let pairs: Vec<(&Plane, &Plane)> = noisy.iter().map(|n| (&clean, n)).collect();
    let fit = fit_noise_params(&pairs)?;

    println!("          shot        read");
    println!("truth   {:.3e}   {:.3e}", truth.shot, truth.read);
    println!("fitted  {:.3e}   {:.3e}", fit.shot, fit.read);
    for x in [0.01, 0.1, 0.5] {
        println!("std at {x:<4}: {:.4} (fitted {:.4})", truth.variance(x).sqrt(), fit.variance(x).sqrt());
    }
    Ok(())
}
