//! Simulate a small noisy raw dataset, fit a voxel field to it, and score
//! renders of held-out views.
//!
//! ```text
//! cargo run --release --example train_toy -- [steps]
//! ```

use rawfield::ablation::{display_gain, evaluate, raw_training_set};
use rawfield::synth::{generate_dataset, SceneSpec, ShutterEntry};
use rawfield::train::{train_from, TrainConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let spec = SceneSpec {
        width: 48,
        height: 48,
        focal: 60.0,
        n_train: 12,
        n_test: 2,
        resolution: [32; 3],
        shutters: vec![ShutterEntry::noisy(0.5)],
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
    train_from(&mut state, &set, &cfg, |r| {
        if r.step % 50 == 0 {
            println!("step {:>5}  loss {:.5}", r.step, r.loss);
        }
    })?;

    let gain = display_gain(&data.test)?;
    let report = evaluate(&state.field, &data.test, gain, 64)?;
    print!("{}", report.to_table());

    let path = std::env::temp_dir().join("train_toy.ckpt");
    state.save(&path, &cfg)?;
    println!("wrote {}", path.display());
    Ok(())
}
