//! Trains the multi-task model on a freshly generated synthetic dataset and
//! prints one line per epoch.
//!
//! cargo run --release --example train_synthetic -- [seed] [mode] [epochs]

use std::time::Instant;

use affect_mtl::config::{SynthConfig, TrainConfig};
use affect_mtl::losses::Mode;
use affect_mtl::synth::generate_synthetic;
use affect_mtl::trainer::run_training_with;

fn main() -> affect_mtl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mode: Mode = args
        .next()
        .map_or(Mode::SsMfar, |s| s.parse().expect("mode"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));

    let data = generate_synthetic(&SynthConfig::default(), seed)?;
    let cfg = TrainConfig {
        seed,
        mode,
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = run_training_with(&data.train, &data.val, &cfg, |r| {
        println!(
            "epoch {:>2}  loss {:.4}  conf {:.2}  exp_f1 {:.3}  p_va {:.3}  au_f1 {:.3}  p_mtl {:.3}",
            r.epoch, r.loss.total, r.confident_fraction, r.val.p_exp, r.val.p_va, r.val.p_au, r.val.p_mtl
        );
    })?;
    println!(
        "best epoch {:?} in {:.1}s",
        out.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
