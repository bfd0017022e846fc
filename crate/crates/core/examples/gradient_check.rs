//! Compares the analytic gradient of the full semi-supervised objective
//! against central finite differences on a tiny random network.
//!
//! cargo run --release --example gradient_check -- [seed]

use affect_mtl::data::{AnnotationSet, DatasetWeights};
use affect_mtl::image::Image;
use affect_mtl::losses::{LossWeights, Mode};
use affect_mtl::network::{init_params, ModelConfig, Params};
use affect_mtl::pseudo_label::ConfidencePartition;
use affect_mtl::trainer::{objective, ObjectiveInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn main() -> affect_mtl::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_height: 6,
        input_width: 6,
        hidden: 4,
        feature_dim: 4,
        exp_hidden: 4,
        va_hidden: 4,
    };
    let params = init_params(&cfg, seed)?;
    let mut image = || Image::new(6, 6, (0..36).map(|_| r.random::<f64>()).collect());
    let weak = vec![image()?, image()?, image()?];
    let strong = vec![image()?, image()?];
    let labels = vec![
        AnnotationSet {
            va: Some([0.3, -0.2]),
            expression: Some(5),
            action_units: Some([1, 0, 1, 0, 0, 1, 0, 0, 1, 1, 0, 0]),
        },
        AnnotationSet {
            va: Some([-0.4, 0.1]),
            expression: None,
            action_units: None,
        },
        AnnotationSet {
            va: None,
            expression: None,
            action_units: Some([0; 12]),
        },
    ];
    let partition = ConfidencePartition {
        confident: vec![(0, 2)],
        non_confident: vec![1],
    };
    let weights = DatasetWeights::uniform();
    let input = ObjectiveInput {
        labels: &labels,
        weak: &weak,
        unlabeled: &[1, 2],
        strong: &strong,
        partition: &partition,
        weights: &weights,
        loss_weights: LossWeights::default(),
        mode: Mode::SsMfar,
    };

    let (loss, grads) = objective(&params, &input)?;
    println!(
        "objective {:.6} over {} parameters",
        loss.total,
        params.num_params()
    );
    let analytic: Vec<f64> = grads.values().collect();
    let total = |p: &Params| objective(p, &input).map(|(l, _)| l.total);
    let nudged = |k: usize, d: f64| {
        let mut p = params.clone();
        let mut i = 0;
        p.for_each_mut(|_, v| {
            if i == k {
                *v += d;
            }
            i += 1;
        });
        p
    };
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let n = (total(&nudged(k, STEP))? - total(&nudged(k, -STEP))?) / (2.0 * STEP);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
