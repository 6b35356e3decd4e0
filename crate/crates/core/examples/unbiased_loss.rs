//! Fit a single value to very noisy observations of a dark signal. The
//! relative loss with a detached weight lands on the sample mean; pushing
//! the same data through a log tone curve first pulls the answer far below it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rawfield::loss::{fit_constant, LossConfig, LossVariant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let signal = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.05)?;
    let obs: Vec<f64> = (0..100_000).map(|_| signal + noise.sample(&mut rng)).collect();
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;

    let weighted = fit_constant(&obs, &LossConfig::default(), 0.5, 100)?;

    // The log curve needs nonnegative inputs, as a clipped display image would be.
    let clipped: Vec<f64> = obs.iter().map(|v| v.max(0.0)).collect();
    let clipped_mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
    let log_cfg = LossConfig {
        variant: LossVariant::Tonemapped,
        ..Default::default()
    };
    let tonemapped = fit_constant(&clipped, &log_cfg, 0.5, 300)?;

    println!("true signal            {signal:.5}");
    println!("sample mean            {mean:.5}");
    println!("relative loss fit      {weighted:.5}");
    println!("clipped sample mean    {clipped_mean:.5}");
    println!("tonemapped loss fit    {tonemapped:.5}");
    Ok(())
}
