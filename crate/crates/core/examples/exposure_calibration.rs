//! Train on a bracketed capture in which the fast shutter's per-channel
//! gains are off, then compare the learned exposure scales with the
//! injected ones.
//!
//! ```text
//! cargo run --release --example exposure_calibration -- [steps]
//! ```

use rawfield::ablation::raw_training_set;
use rawfield::noise::{MiscalibrationEntry, MiscalibrationTable};
use rawfield::synth::{generate_dataset, SceneSpec, ShutterEntry};
use rawfield::train::{train_from, TrainConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);
    let injected = [0.89, 0.93, 0.75];
    let (slow, fast) = (1.0, 0.25);
    let spec = SceneSpec {
        width: 48,
        height: 48,
        focal: 60.0,
        n_train: 16,
        n_test: 1,
        resolution: [32; 3],
        shutters: vec![ShutterEntry::clean(slow), ShutterEntry::clean(fast)],
        bracketed: true,
        miscalibration: Some(MiscalibrationTable::new(vec![
            MiscalibrationEntry { shutter: slow, alpha: [1.0; 3] },
            MiscalibrationEntry { shutter: fast, alpha: injected },
        ])?),
        ..SceneSpec::default()
    };
    let data = generate_dataset(&spec, 0)?;
    let set = raw_training_set(&data)?;
    let cfg = TrainConfig {
        steps,
        batch_rays: 512,
        samples_per_ray: 48,
        resolution: [32; 3],
        lr_init: 3.0,
        lr_final: 1e-2,
        tv_density: 0.03,
        tv_color: 1.0,
        ..TrainConfig::grid()
    };

    let mut state = TrainState::init(&set, &cfg)?;
    let mut trace = Vec::new();
    train_from(&mut state, &set, &cfg, |r| {
        if r.step % 100 == 0 {
            trace.push((r.step, r.loss));
        }
    })?;
    for (step, loss) in trace {
        println!("step {step:>5}  loss {loss:.5}");
    }

    println!("reference shutter scales: {:.4?}", state.calibration.alpha(slow)?);
    let learned = state.calibration.alpha(fast)?;
    for (c, name) in ["red", "green", "blue"].iter().enumerate() {
        let err = 100.0 * (learned[c] / injected[c] - 1.0);
        println!("{name:>5}: learned {:.4}  injected {:.2}  ({err:+.1}%)", learned[c], injected[c]);
    }
    Ok(())
}
