//! Compares the three training modes on the synthetic benchmark over several
//! seeds, reporting validation expression macro-F1 of each run's selected
//! (best validation score) parameters.
//!
//! cargo run --release --example ablation -- [seeds]

use affect_mtl::config::{SynthConfig, TrainConfig};
use affect_mtl::losses::Mode;
use affect_mtl::synth::generate_synthetic;
use affect_mtl::trainer::{evaluate, run_training};

fn main() -> affect_mtl::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .map_or(5, |s| s.parse().expect("seed count"));
    let modes = [Mode::SsMfar, Mode::Mfar, Mode::SsMfarNoKl];
    println!("seed  {:>8}  {:>8}  {:>14}", modes[0], modes[1], modes[2]);
    for seed in 0..seeds {
        let data = generate_synthetic(&SynthConfig::default(), seed)?;
        let mut row = Vec::new();
        for mode in modes {
            let cfg = TrainConfig {
                seed,
                mode,
                ..TrainConfig::default()
            };
            let out = run_training(&data.train, &data.val, &cfg)?;
            row.push(evaluate(&out.best_params, &data.val)?.p_exp);
        }
        println!(
            "{seed:>4}  {:>8.4}  {:>8.4}  {:>14.4}",
            row[0], row[1], row[2]
        );
    }
    Ok(())
}
