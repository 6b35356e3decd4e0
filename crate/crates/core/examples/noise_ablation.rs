//! Train raw-domain and display-domain fields across a range of noise
//! levels and compare their held-out PSNR. The full grid takes several
//! minutes in release mode; pass `--quick` for a rough short run.

use rawfield::ablation::{run_setting, AblationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = AblationConfig::desk();
    if std::env::args().any(|a| a == "--quick") {
        cfg.raw.steps = 200;
        cfg.ldr.steps = 200;
    }
    println!("{:>10}  {:>9}  {:>9}", "shutter", "raw dB", "ldr dB");
    for &shutter in &cfg.grid {
        let row = run_setting(&cfg, shutter)?;
        let label = if shutter.noiseless {
            "clean".to_string()
        } else {
            format!("1/{}", (1.0 / shutter.time).round())
        };
        println!("{label:>10}  {:>9.2}  {:>9.2}", row.raw_psnr, row.ldr_psnr);
    }
    Ok(())
}
