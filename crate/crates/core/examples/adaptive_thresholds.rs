//! Walks the class-adaptive confidence thresholds through a few epochs and
//! partitions a handful of unlabeled predictions with them.
//!
//! cargo run --example adaptive_thresholds

use affect_mtl::pseudo_label::{
    adaptive_thresholds, partition_confident, ClassStatAccumulator, ThresholdConfig,
};

fn main() {
    let cfg = ThresholdConfig::default();
    let mut acc = ClassStatAccumulator::default();

    let one_hot = |c: usize, p: f64| {
        let mut v = vec![(1.0 - p) / 7.0; 8];
        v[c] = p;
        v
    };
    // labeled batch: class 0 predicted confidently, class 1 weakly, class 2 wrong
    let probs = vec![
        one_hot(0, 0.9),
        one_hot(0, 0.8),
        one_hot(1, 0.4),
        one_hot(3, 0.6),
    ];
    let labels = [0, 0, 1, 2];

    for epoch in 1..=5 {
        acc.update(&probs, &labels, cfg.momentum);
        let t = adaptive_thresholds(&acc, epoch, &cfg);
        println!(
            "epoch {epoch}: T0 {:.4}  T1 {:.4}  T2 {:.4}",
            t.0[0], t.0[1], t.0[2]
        );
    }

    let t = adaptive_thresholds(&acc, 5, &cfg);
    let unlabeled = vec![one_hot(0, 0.7), one_hot(1, 0.5), one_hot(2, 0.3)];
    let part = partition_confident(&unlabeled, &t);
    println!("confident (index, pseudo-label): {:?}", part.confident);
    println!("non-confident: {:?}", part.non_confident);
}
