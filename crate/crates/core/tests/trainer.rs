use std::path::PathBuf;

use affect_mtl::augment::weak_view;
use affect_mtl::config::{Imbalance, SynthConfig, TrainConfig, Widths};
use affect_mtl::data::{AnnotationSet, Dataset, DatasetWeights, Sample};
use affect_mtl::losses::{LossWeights, Mode};
use affect_mtl::network::{init_params, Params};
use affect_mtl::pseudo_label::ConfidencePartition;
use affect_mtl::rng::{substream, Stream};
use affect_mtl::synth::{generate_synthetic, LabeledImages, SyntheticData};
use affect_mtl::trainer::{
    make_epoch_schedule, model_config, objective, run_training, train_step, BatchItem,
    ObjectiveInput, StepContext, TrainState,
};
use affect_mtl::Error;

fn small_synth(mask_exp: f64) -> SynthConfig {
    SynthConfig {
        train_count: 160,
        val_count: 60,
        image_size: 8,
        mask_exp,
        ..SynthConfig::default()
    }
}

fn small_train(epochs: usize, mode: Mode) -> TrainConfig {
    TrainConfig {
        epochs,
        mode,
        batch_size: 32,
        widths: Widths {
            hidden: 16,
            feature_dim: 8,
            exp_hidden: 8,
            va_hidden: 8,
        },
        ..TrainConfig::default()
    }
}

fn initial_params(data: &LabeledImages, cfg: &TrainConfig) -> Params {
    let img = &data.images[0];
    init_params(&model_config(cfg, img.height, img.width), cfg.seed).unwrap()
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let data = generate_synthetic(&small_synth(0.4), 1).unwrap();
    let cfg = small_train(0, Mode::SsMfar);
    let out = run_training(&data.train, &data.val, &cfg).unwrap();
    assert!(out.reports.is_empty());
    assert_eq!(out.best_epoch, None);
    assert_eq!(out.best_params, initial_params(&data.train, &cfg));
}

#[test]
fn same_seed_gives_identical_reports() {
    let data = generate_synthetic(&small_synth(0.4), 2).unwrap();
    let cfg = small_train(3, Mode::SsMfar);
    let a = run_training(&data.train, &data.val, &cfg).unwrap();
    let b = run_training(&data.train, &data.val, &cfg).unwrap();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.best_params, b.best_params);
}

#[test]
fn reports_stay_in_range() {
    let data = generate_synthetic(&small_synth(0.4), 3).unwrap();
    let cfg = small_train(3, Mode::SsMfar);
    for r in run_training(&data.train, &data.val, &cfg).unwrap().reports {
        assert!((0.0..=1.0).contains(&r.confident_fraction));
        assert!(r
            .thresholds
            .iter()
            .all(|&t| (0.0..cfg.thresholds.beta).contains(&t)));
        assert!((r.val.p_mtl - (r.val.p_va + r.val.p_exp + r.val.p_au)).abs() <= 1e-12);
    }
}

#[test]
fn semi_supervised_equals_supervised_on_fully_labeled_data() {
    let data = generate_synthetic(&small_synth(0.0), 4).unwrap();
    let mfar = small_train(3, Mode::Mfar);
    let ss = TrainConfig {
        mode: Mode::SsMfar,
        loss_weights: LossWeights {
            supervised: 1.0,
            ..LossWeights::default()
        },
        ..mfar.clone()
    };
    let a = run_training(&data.train, &data.val, &mfar).unwrap();
    let b = run_training(&data.train, &data.val, &ss).unwrap();
    assert_eq!(a.final_state.params, b.final_state.params);
    for r in &b.reports {
        assert_eq!((r.loss.l_exp_unsup, r.loss.l_exp_cons), (0.0, 0.0));
    }
}

#[test]
fn supervised_mode_reports_no_semi_supervised_loss() {
    let data = generate_synthetic(&small_synth(0.4), 5).unwrap();
    let out = run_training(&data.train, &data.val, &small_train(2, Mode::Mfar)).unwrap();
    for r in &out.reports {
        assert_eq!((r.loss.l_exp_unsup, r.loss.l_exp_cons), (0.0, 0.0));
    }
}

#[test]
fn no_kl_mode_excludes_consistency_from_totals() {
    let data = generate_synthetic(&small_synth(0.4), 6).unwrap();
    let out = run_training(&data.train, &data.val, &small_train(2, Mode::SsMfarNoKl)).unwrap();
    let lw = LossWeights::default();
    for r in &out.reports {
        let l = &r.loss;
        let expected = lw.supervised * l.l_exp_sup + lw.unsupervised * l.l_exp_unsup;
        assert!((l.l_exp - expected).abs() <= 1e-9, "{l:?}");
    }
}

fn unlabeled_batch(data: &SyntheticData, n: usize) -> Vec<(String, AnnotationSet)> {
    data.train.dataset.samples[..n]
        .iter()
        .map(|s| (s.id.clone(), AnnotationSet::unlabeled()))
        .collect()
}

#[test]
fn all_invalid_batch_leaves_parameters_unchanged() {
    let data = generate_synthetic(&small_synth(0.4), 7).unwrap();
    let cfg = small_train(1, Mode::Mfar);
    let mut state = TrainState::new(initial_params(&data.train, &cfg));
    let before = state.params.clone();
    let labels = unlabeled_batch(&data, 5);
    let batch: Vec<BatchItem<'_>> = labels
        .iter()
        .zip(&data.train.images)
        .map(|((id, a), image)| BatchItem {
            id,
            image,
            labels: a,
        })
        .collect();
    let weights = DatasetWeights::uniform();
    let ctx = StepContext {
        weights: &weights,
        epoch: 0,
        batch: 0,
    };
    let out = train_step(&mut state, &batch, &ctx, &cfg).unwrap();
    assert_eq!(out.loss.total, 0.0);
    assert_eq!(state.params, before);
}

#[test]
fn single_step_matches_adam_replay_of_verified_gradient() {
    let data = generate_synthetic(&small_synth(0.0), 8).unwrap();
    let cfg = small_train(1, Mode::SsMfar);
    let sample = &data.train.dataset.samples[0];
    let image = &data.train.images[0];
    let params = initial_params(&data.train, &cfg);
    let weights = DatasetWeights::uniform();

    let view = weak_view(image, &cfg.aug, cfg.seed, 0, &sample.id);
    let labels = [sample.annotations.clone()];
    let weak = [view];
    let part = ConfidencePartition::default();
    let input = ObjectiveInput {
        labels: &labels,
        weak: &weak,
        unlabeled: &[],
        strong: &[],
        partition: &part,
        weights: &weights,
        loss_weights: cfg.loss_weights,
        mode: cfg.mode,
    };
    let (_, grads) = objective(&params, &input).unwrap();
    let g: Vec<f64> = grads.values().collect();

    let h = 1e-5;
    let total = |p: &Params| objective(p, &input).unwrap().0.total;
    for (k, &a) in g.iter().enumerate() {
        let shifted = |d: f64| {
            let mut q = params.clone();
            let mut i = 0;
            q.for_each_mut(|_, v| {
                if i == k {
                    *v += d;
                }
                i += 1;
            });
            q
        };
        let n = (total(&shifted(h)) - total(&shifted(-h))) / (2.0 * h);
        assert!(
            (a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-6),
            "param {k}: {a} vs {n}"
        );
    }

    let mut state = TrainState::new(params.clone());
    let batch = [BatchItem {
        id: &sample.id,
        image,
        labels: &sample.annotations,
    }];
    let ctx = StepContext {
        weights: &weights,
        epoch: 0,
        batch: 0,
    };
    train_step(&mut state, &batch, &ctx, &cfg).unwrap();

    let mut lrs = Vec::new();
    let mut probe = params.clone();
    probe.for_each_mut(|layer, _| {
        lrs.push(if layer <= 1 {
            cfg.lr_base
        } else {
            cfg.lr_heads
        })
    });
    let eps = 1e-8;
    for (k, ((before, after), gk)) in params
        .values()
        .zip(state.params.values())
        .zip(&g)
        .enumerate()
    {
        let expected = -lrs[k] * gk / (gk.abs() + eps);
        assert!(((after - before) - expected).abs() <= 1e-12, "param {k}");
    }
}

fn dataset(classes: &[Option<u8>]) -> Dataset {
    Dataset::new(
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| Sample {
                id: format!("s{i}"),
                image_ref: PathBuf::from(format!("s{i}.pgm")),
                annotations: AnnotationSet {
                    va: None,
                    expression: c,
                    action_units: None,
                },
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn resampling_balances_labeled_classes() {
    // class 0 holds 90% of the labels; every class is present
    let mut classes: Vec<Option<u8>> = vec![Some(0); 630];
    for c in 1..8u8 {
        classes.extend(std::iter::repeat_n(Some(c), 10));
    }
    classes.extend(std::iter::repeat_n(None, 50));
    let d = dataset(&classes);
    let mut counts = [0usize; 8];
    let mut unlabeled = 0usize;
    let mut draws = 0usize;
    let mut epoch = 0u64;
    while draws < 100_000 {
        let order = make_epoch_schedule(
            &d,
            Imbalance::Resample,
            &mut substream(9, Stream::Schedule, &[epoch]),
        );
        assert_eq!(order.len(), d.len());
        for i in order {
            match d.samples[i].annotations.expression {
                Some(c) => {
                    counts[c as usize] += 1;
                    draws += 1;
                }
                None => unlabeled += 1,
            }
        }
        epoch += 1;
    }
    assert_eq!(unlabeled, 50 * epoch as usize);
    for (c, &n) in counts.iter().enumerate() {
        let share = n as f64 / draws as f64;
        assert!((share - 0.125).abs() <= 0.02, "class {c}: {share}");
    }
}

#[test]
fn reweight_schedule_is_a_seeded_permutation() {
    let d = dataset(&[Some(0), None, Some(2), Some(2), None, Some(7)]);
    let mut a = make_epoch_schedule(
        &d,
        Imbalance::Reweight,
        &mut substream(4, Stream::Schedule, &[0]),
    );
    let b = make_epoch_schedule(
        &d,
        Imbalance::Reweight,
        &mut substream(4, Stream::Schedule, &[0]),
    );
    assert_eq!(a, b);
    a.sort_unstable();
    assert_eq!(a, (0..6).collect::<Vec<_>>());
}

#[test]
fn divergence_names_epoch_and_batch() {
    let data = generate_synthetic(&small_synth(0.4), 10).unwrap();
    let cfg = TrainConfig {
        lr_base: 1e300,
        lr_heads: 1e300,
        ..small_train(2, Mode::SsMfar)
    };
    match run_training(&data.train, &data.val, &cfg) {
        Err(Error::Divergence { epoch, batch, .. }) => {
            assert_eq!(epoch, 1);
            assert!(batch >= 1);
        }
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|o| o.reports.len())
        ),
    }
}

/// Desk-scale training properties on the default synthetic benchmark.
mod benchmark {
    use super::*;

    const SEEDS: u64 = 5;

    fn reports(seed: u64, epochs: usize) -> Vec<affect_mtl::trainer::EpochReport> {
        let data = generate_synthetic(&SynthConfig::default(), seed).unwrap();
        let cfg = TrainConfig {
            seed,
            epochs,
            ..TrainConfig::default()
        };
        run_training(&data.train, &data.val, &cfg).unwrap().reports
    }

    #[test]
    fn confident_fraction_grows_over_training() {
        let mut grew = 0;
        for seed in 0..SEEDS {
            let r = reports(seed, 30);
            let mean = |s: &[affect_mtl::trainer::EpochReport]| {
                s.iter().map(|r| r.confident_fraction).sum::<f64>() / s.len() as f64
            };
            let (first, last) = (mean(&r[..5]), mean(&r[r.len() - 5..]));
            println!("seed {seed}: first five {first:.3}, last five {last:.3}");
            grew += usize::from(last >= first);
        }
        assert!(
            grew >= 4,
            "confident fraction grew in only {grew}/{SEEDS} seeds"
        );
    }

    #[test]
    fn loss_moving_average_never_rises_early() {
        let r = reports(0, 20);
        let totals: Vec<f64> = r.iter().map(|r| r.loss.total).collect();
        let avg: Vec<f64> = totals
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / 5.0)
            .collect();
        for (i, w) in avg.windows(2).enumerate() {
            assert!(
                w[1] <= w[0],
                "average over epochs {}..={} rose: {avg:?}",
                i + 2,
                i + 6
            );
        }
    }
}
