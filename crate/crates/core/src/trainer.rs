//! The training loop.
//!
//! Per batch: forward the weak view of every sample; supervised expression
//! CE, AU BCE and VA CCC on the samples labeled for each task; refresh the
//! per-class statistics from the labeled expression predictions and derive
//! thresholds; in the semi-supervised modes, forward the strong view of every
//! sample lacking an expression label, split those samples by confidence,
//! and add pseudo-label CE on the confident ones and weak/strong symmetric KL
//! on the rest; combine, backpropagate and take one Adam step (backbone and
//! heads at separate learning rates).
//!
//! All randomness derives from `(seed, epoch, sample id)` sub-streams, so the
//! optimizer state, class statistics and epoch counter fully describe a run.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_view, weak_view};
use crate::config::{Imbalance, TrainConfig};
use crate::data::{
    dataset_stats, expression_class_weights, AnnotationSet, Dataset, DatasetWeights,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    ccc_loss, consistency_loss_grad, overall_loss, unsupervised_ce, weighted_bce,
    weighted_cross_entropy, ExpLogits, LossBreakdown, LossComponents, LossWeights, Mode,
};
use crate::metrics::{mtl_score, Gold, MtlScore, Prediction};
use crate::network::{
    argmax, backward, forward, init_params, sigmoid, softmax, Forward, Grads, HeadGrad,
    ModelConfig, Params,
};
use crate::optim::{adam_step, AdamHyper, AdamState, LrMap};
use crate::pseudo_label::{
    adaptive_thresholds, partition_confident, ClassStatAccumulator, ConfidencePartition, Thresholds,
};
use crate::rng::{self, Rng, Stream};
use crate::synth::LabeledImages;

const EVAL_CHUNK: usize = 256;

/// Sample order for one epoch.
///
/// `Reweight` shuffles all indices. `Resample` draws as many labeled samples
/// as there are, with replacement and probability proportional to their
/// class weight, then shuffles them together with the unlabeled indices.
pub fn make_epoch_schedule(dataset: &Dataset, imbalance: Imbalance, rng: &mut Rng) -> Vec<usize> {
    match imbalance {
        Imbalance::Reweight => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(rng);
            order
        }
        Imbalance::Resample => {
            let weights = expression_class_weights(&dataset_stats(dataset));
            let (labeled, mut order): (Vec<usize>, Vec<usize>) = (0..dataset.len())
                .partition(|&i| dataset.samples[i].annotations.expression.is_some());
            if !labeled.is_empty() {
                let w: Vec<f64> = labeled
                    .iter()
                    .map(|&i| weights[dataset.samples[i].annotations.expression.unwrap() as usize])
                    .collect();
                let dist = WeightedIndex::new(&w).expect("labeled classes have positive weight");
                order.extend((0..labeled.len()).map(|_| labeled[dist.sample(rng)]));
            }
            order.shuffle(rng);
            order
        }
    }
}

/// Loss weights used by the supervised terms: class re-weighting is switched
/// off when imbalance is handled by resampling.
pub fn training_weights(dataset: &Dataset, imbalance: Imbalance) -> DatasetWeights {
    let mut w = DatasetWeights::from_stats(&dataset_stats(dataset));
    if imbalance == Imbalance::Resample {
        w.expression = [1.0; crate::NUM_EXPRESSIONS];
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: Params,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub class_stats: ClassStatAccumulator,
}

impl TrainState {
    pub fn new(params: Params) -> Self {
        Self {
            adam: AdamState::new(&params),
            params,
            epoch: 0,
            class_stats: ClassStatAccumulator::default(),
        }
    }
}

pub fn model_config(cfg: &TrainConfig, height: usize, width: usize) -> ModelConfig {
    ModelConfig {
        input_height: height,
        input_width: width,
        hidden: cfg.widths.hidden,
        feature_dim: cfg.widths.feature_dim,
        exp_hidden: cfg.widths.exp_hidden,
        va_hidden: cfg.widths.va_hidden,
    }
}

/// Everything the differentiable part of a step depends on. The confidence
/// split is an input: it is a discrete decision taken before the loss, and
/// no gradient flows through it.
#[derive(Debug, Clone)]
pub struct ObjectiveInput<'a> {
    pub labels: &'a [AnnotationSet],
    pub weak: &'a [Image],
    /// Positions in `weak` of the samples used by the semi-supervised branch.
    pub unlabeled: &'a [usize],
    /// Strong views, aligned with `unlabeled`.
    pub strong: &'a [Image],
    /// Split of `unlabeled` (positions index into it).
    pub partition: &'a ConfidencePartition,
    pub weights: &'a DatasetWeights,
    pub loss_weights: LossWeights,
    pub mode: Mode,
}

fn exp_logits(fwd: &Forward, idx: impl Iterator<Item = usize>) -> Vec<ExpLogits> {
    idx.map(|i| fwd.outputs[i].exp_logits).collect()
}

/// Loss breakdown and gradients at the head outputs of the weak and strong
/// passes.
fn assemble(
    input: &ObjectiveInput<'_>,
    weak: &Forward,
    strong: Option<&Forward>,
) -> Result<(LossBreakdown, Vec<HeadGrad>, Vec<HeadGrad>)> {
    let n = input.weak.len();
    let labels = input.labels;
    let exp_labels: Vec<Option<usize>> = labels
        .iter()
        .map(|a| a.expression.map(usize::from))
        .collect();
    let au_labels: Vec<_> = labels.iter().map(|a| a.action_units).collect();
    let va_labels: Vec<_> = labels.iter().map(|a| a.va).collect();

    let weak_exp = exp_logits(weak, 0..n);
    let weak_au: Vec<_> = weak.outputs.iter().map(|o| o.au_logits).collect();
    let weak_va: Vec<_> = weak.outputs.iter().map(|o| o.va).collect();

    let ce = weighted_cross_entropy(&weak_exp, &exp_labels, &input.weights.expression)?;
    let bce = weighted_bce(&weak_au, &au_labels, &input.weights.action_units);
    let va = ccc_loss(&weak_va, &va_labels);

    let (ks, ku, kc) = input.mode.coefficients(&input.loss_weights);
    let mut components = LossComponents {
        exp_sup: ce.value,
        au: bce.value,
        va: va.value,
        ..Default::default()
    };

    let mut weak_grads: Vec<HeadGrad> = (0..n)
        .map(|i| {
            let mut g = HeadGrad {
                au_logits: bce.grads[i],
                va: va.grads[i],
                ..Default::default()
            };
            for (gk, ck) in g.exp_logits.iter_mut().zip(&ce.grads[i]) {
                *gk = ks * ck;
            }
            g
        })
        .collect();
    let mut strong_grads = vec![HeadGrad::default(); input.unlabeled.len()];

    if let (true, Some(strong)) = (input.mode.is_semi_supervised(), strong) {
        let m = input.unlabeled.len();
        let weak_u = exp_logits(weak, input.unlabeled.iter().copied());
        let strong_u = exp_logits(strong, 0..m);
        let unsup = unsupervised_ce(&strong_u, &input.partition.pseudo_labels(m))?;
        let mask = input.partition.non_confident_mask(m);
        let (kl, gw, gs) = consistency_loss_grad(&weak_u, &strong_u, &mask);
        components.exp_unsup = unsup.value;
        components.exp_cons = kl;
        for j in 0..m {
            let wg = &mut weak_grads[input.unlabeled[j]].exp_logits;
            let sg = &mut strong_grads[j].exp_logits;
            for k in 0..crate::NUM_EXPRESSIONS {
                if kc != 0.0 {
                    wg[k] += kc * gw[j][k];
                }
                sg[k] = ku * unsup.grads[j][k] + if kc != 0.0 { kc * gs[j][k] } else { 0.0 };
            }
        }
    }

    let breakdown = overall_loss(&components, &input.loss_weights, input.mode);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((breakdown, weak_grads, strong_grads))
}

fn objective_from(
    params: &Params,
    input: &ObjectiveInput<'_>,
    weak: &Forward,
    strong: Option<&Forward>,
) -> Result<(LossBreakdown, Grads)> {
    let (loss, wg, sg) = assemble(input, weak, strong)?;
    let mut grads = backward(params, input.weak, weak, &wg)?;
    if let Some(strong) = strong {
        grads.add_assign(&backward(params, input.strong, strong, &sg)?);
    }
    Ok((loss, grads))
}

/// Total loss of one batch and its exact gradient with respect to every
/// parameter.
pub fn objective(params: &Params, input: &ObjectiveInput<'_>) -> Result<(LossBreakdown, Grads)> {
    if input.labels.len() != input.weak.len() || input.unlabeled.len() != input.strong.len() {
        return Err(Error::Shape("objective inputs are not aligned".into()));
    }
    let weak = forward(params, input.weak)?;
    let strong = if input.mode.is_semi_supervised() && !input.strong.is_empty() {
        Some(forward(params, input.strong)?)
    } else {
        None
    };
    objective_from(params, input, &weak, strong.as_ref())
}

/// One batch element.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub id: &'a str,
    pub image: &'a Image,
    pub labels: &'a AnnotationSet,
}

#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub weights: &'a DatasetWeights,
    /// 0-based index of the running epoch (keys augmentation streams).
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    pub thresholds: Thresholds,
    pub confident: usize,
    pub unlabeled: usize,
}

/// One optimizer step on a batch.
pub fn train_step(
    state: &mut TrainState,
    batch: &[BatchItem<'_>],
    ctx: &StepContext<'_>,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let diverged = |reason: String| Error::Divergence {
        epoch: ctx.epoch + 1,
        batch: ctx.batch,
        reason,
    };
    let labels: Vec<AnnotationSet> = batch.iter().map(|b| b.labels.clone()).collect();
    let weak_imgs: Vec<Image> = batch
        .par_iter()
        .map(|b| weak_view(b.image, &cfg.aug, cfg.seed, ctx.epoch, b.id))
        .collect();
    let weak = forward(&state.params, &weak_imgs).map_err(|e| diverged(e.to_string()))?;
    let weak_probs: Vec<Vec<f64>> = weak
        .outputs
        .iter()
        .map(|o| softmax(&o.exp_logits))
        .collect();

    // class statistics from the labeled weak predictions, then thresholds
    let (lab_probs, lab_y): (Vec<Vec<f64>>, Vec<usize>) = labels
        .iter()
        .zip(&weak_probs)
        .filter_map(|(a, p)| a.expression.map(|y| (p.clone(), usize::from(y))))
        .unzip();
    state
        .class_stats
        .update(&lab_probs, &lab_y, cfg.thresholds.momentum);
    let thresholds = adaptive_thresholds(&state.class_stats, ctx.epoch + 1, &cfg.thresholds);

    let unlabeled: Vec<usize> = (0..batch.len())
        .filter(|&i| labels[i].expression.is_none())
        .collect();
    let unl_probs: Vec<Vec<f64>> = unlabeled.iter().map(|&i| weak_probs[i].clone()).collect();
    let partition = partition_confident(&unl_probs, &thresholds);

    let semi = cfg.mode.is_semi_supervised() && !unlabeled.is_empty();
    let strong_imgs: Vec<Image> = if semi {
        unlabeled
            .par_iter()
            .map(|&i| strong_view(batch[i].image, &cfg.aug, cfg.seed, ctx.epoch, batch[i].id))
            .collect()
    } else {
        Vec::new()
    };
    let strong = if semi {
        Some(forward(&state.params, &strong_imgs).map_err(|e| diverged(e.to_string()))?)
    } else {
        None
    };

    let input = ObjectiveInput {
        labels: &labels,
        weak: &weak_imgs,
        unlabeled: if semi { &unlabeled } else { &[] },
        strong: &strong_imgs,
        partition: &partition,
        weights: ctx.weights,
        loss_weights: cfg.loss_weights,
        mode: cfg.mode,
    };
    let (loss, grads) = objective_from(&state.params, &input, &weak, strong.as_ref())
        .map_err(|e| diverged(e.to_string()))?;

    let lr = LrMap {
        backbone: cfg.lr_base,
        heads: cfg.lr_heads,
    };
    adam_step(
        &mut state.params,
        &grads,
        &mut state.adam,
        &lr,
        &AdamHyper::default(),
    );
    if !state.params.is_finite() {
        return Err(diverged("non-finite parameters after update".into()));
    }
    Ok(StepOutcome {
        loss,
        thresholds,
        confident: partition.confident.len(),
        unlabeled: unlabeled.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    /// Share of unlabeled sample visits that were confident.
    pub confident_fraction: f64,
    /// Thresholds after the epoch's last batch.
    pub thresholds: [f64; crate::NUM_EXPRESSIONS],
    pub val: MtlScore,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score (initial
    /// parameters when no epoch ran).
    pub best_params: Params,
    pub best_epoch: Option<usize>,
    pub reports: Vec<EpochReport>,
    pub final_state: TrainState,
}

/// Predictions of the un-augmented images.
pub fn predict(params: &Params, images: &[Image]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let fwd = forward(params, chunk)?;
        out.extend(fwd.outputs.iter().map(|o| Prediction {
            expression: argmax(&o.exp_logits),
            au_probs: o.au_logits.map(sigmoid),
            va: o.va,
        }));
    }
    Ok(out)
}

pub fn golds(dataset: &Dataset) -> Vec<Gold> {
    dataset
        .samples
        .iter()
        .map(|s| Gold {
            expression: s.annotations.expression.map(usize::from),
            action_units: s.annotations.action_units,
            va: s.annotations.va,
        })
        .collect()
}

pub fn evaluate(params: &Params, data: &LabeledImages) -> Result<MtlScore> {
    Ok(mtl_score(
        &predict(params, &data.images)?,
        &golds(&data.dataset),
    ))
}

/// One epoch over `train`; returns the mean loss and confident fraction.
pub fn run_epoch(
    state: &mut TrainState,
    train: &LabeledImages,
    weights: &DatasetWeights,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, f64, Thresholds)> {
    let epoch = state.epoch;
    let mut sched_rng = rng::substream(cfg.seed, Stream::Schedule, &[epoch as u64]);
    let order = make_epoch_schedule(&train.dataset, cfg.imbalance, &mut sched_rng);
    let mut sum = LossBreakdown::default();
    let (mut confident, mut unlabeled, mut batches) = (0usize, 0usize, 0usize);
    let mut thresholds = adaptive_thresholds(&state.class_stats, epoch + 1, &cfg.thresholds);
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let items: Vec<BatchItem<'_>> = idx
            .iter()
            .map(|&i| BatchItem {
                id: &train.dataset.samples[i].id,
                image: &train.images[i],
                labels: &train.dataset.samples[i].annotations,
            })
            .collect();
        let ctx = StepContext {
            weights,
            epoch,
            batch: b,
        };
        let out = train_step(state, &items, &ctx, cfg)?;
        sum.l_exp_sup += out.loss.l_exp_sup;
        sum.l_exp_unsup += out.loss.l_exp_unsup;
        sum.l_exp_cons += out.loss.l_exp_cons;
        sum.l_au += out.loss.l_au;
        sum.l_va += out.loss.l_va;
        sum.l_exp += out.loss.l_exp;
        sum.total += out.loss.total;
        confident += out.confident;
        unlabeled += out.unlabeled;
        thresholds = out.thresholds;
        batches += 1;
    }
    let k = batches.max(1) as f64;
    let mean = LossBreakdown {
        l_exp_sup: sum.l_exp_sup / k,
        l_exp_unsup: sum.l_exp_unsup / k,
        l_exp_cons: sum.l_exp_cons / k,
        l_au: sum.l_au / k,
        l_va: sum.l_va / k,
        l_exp: sum.l_exp / k,
        total: sum.total / k,
    };
    let frac = if unlabeled == 0 {
        0.0
    } else {
        confident as f64 / unlabeled as f64
    };
    state.epoch += 1;
    Ok((mean, frac, thresholds))
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn run_training_with(
    train: &LabeledImages,
    val: &LabeledImages,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (h, w) = train
        .images
        .first()
        .or(val.images.first())
        .map(|i| (i.height, i.width))
        .ok_or_else(|| Error::Config("no images to infer the input size from".into()))?;
    let params = init_params(&model_config(cfg, h, w), cfg.seed)?;
    let weights = training_weights(&train.dataset, cfg.imbalance);
    let mut state = TrainState::new(params);
    let mut best: Option<(f64, usize, Params)> = None;
    let mut reports = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let (loss, confident_fraction, thresholds) = run_epoch(&mut state, train, &weights, cfg)?;
        let val_score = evaluate(&state.params, val)?;
        let report = EpochReport {
            epoch: state.epoch,
            loss,
            confident_fraction,
            thresholds: thresholds.0,
            val: val_score,
        };
        if best.as_ref().is_none_or(|(s, _, _)| report.val.p_mtl > *s) {
            best = Some((report.val.p_mtl, report.epoch, state.params.clone()));
        }
        on_epoch(&report);
        reports.push(report);
    }

    let (best_params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (state.params.clone(), None),
    };
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        reports,
        final_state: state,
    })
}

pub fn run_training(
    train: &LabeledImages,
    val: &LabeledImages,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_training_with(train, val, cfg, |_| {})
}
