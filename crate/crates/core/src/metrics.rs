//! Challenge scoring: mean valence/arousal CCC, expression macro-F1 over 8
//! classes, AU macro-F1 over 12 units, and their sum.

use serde::{Deserialize, Serialize};

use crate::losses::ccc;
use crate::{NUM_AUS, NUM_EXPRESSIONS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    /// `2PR / (P + R)`; any zero denominator makes that quantity 0.
    pub fn f1(&self) -> f64 {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.false_neg);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Macro-F1 over `num_classes` classes, averaging over every class including
/// ones absent from both predictions and gold.
pub fn macro_f1(pred: &[usize], gold: &[usize], num_classes: usize) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), gold.len(), "prediction/gold length mismatch");
    let mut counts = vec![ConfusionCounts::default(); num_classes];
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            counts[g].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[g].false_neg += 1;
        }
    }
    let per_class: Vec<f64> = counts.iter().map(ConfusionCounts::f1).collect();
    let macro_avg = if num_classes == 0 {
        0.0
    } else {
        per_class.iter().sum::<f64>() / num_classes as f64
    };
    (macro_avg, per_class)
}

/// Per-unit binary F1 with predictions binarized at 0.5 (0.5 counts as
/// positive), averaged over the 12 units. Samples without AU labels are
/// skipped.
pub fn au_macro_f1(probs: &[[f64; NUM_AUS]], gold: &[Option<[u8; NUM_AUS]>]) -> (f64, Vec<f64>) {
    assert_eq!(probs.len(), gold.len(), "prediction/gold length mismatch");
    let mut counts = [ConfusionCounts::default(); NUM_AUS];
    for (p, g) in probs.iter().zip(gold) {
        let Some(g) = g else { continue };
        for k in 0..NUM_AUS {
            match (p[k] >= 0.5, g[k] == 1) {
                (true, true) => counts[k].tp += 1,
                (true, false) => counts[k].fp += 1,
                (false, true) => counts[k].false_neg += 1,
                (false, false) => {}
            }
        }
    }
    let per_unit: Vec<f64> = counts.iter().map(ConfusionCounts::f1).collect();
    (per_unit.iter().sum::<f64>() / NUM_AUS as f64, per_unit)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MtlScore {
    pub p_va: f64,
    pub p_exp: f64,
    pub p_au: f64,
    pub p_mtl: f64,
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
    pub exp_f1: Vec<f64>,
    pub au_f1: Vec<f64>,
    /// False when fewer than two VA-labeled samples were available.
    pub va_defined: bool,
}

impl MtlScore {
    pub fn from_components(p_va: f64, p_exp: f64, p_au: f64) -> Self {
        Self {
            p_va,
            p_exp,
            p_au,
            p_mtl: p_va + p_exp + p_au,
            ..Default::default()
        }
    }
}

/// Model outputs needed for scoring one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub expression: usize,
    pub au_probs: [f64; NUM_AUS],
    pub va: [f64; 2],
}

/// Gold labels; `None` excludes the sample from that task's metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gold {
    pub expression: Option<usize>,
    pub action_units: Option<[u8; NUM_AUS]>,
    pub va: Option<[f64; 2]>,
}

pub fn mtl_score(preds: &[Prediction], golds: &[Gold]) -> MtlScore {
    assert_eq!(preds.len(), golds.len(), "prediction/gold length mismatch");

    let (ep, eg): (Vec<usize>, Vec<usize>) = preds
        .iter()
        .zip(golds)
        .filter_map(|(p, g)| g.expression.map(|e| (p.expression, e)))
        .unzip();
    let (p_exp, exp_f1) = macro_f1(&ep, &eg, NUM_EXPRESSIONS);

    let au_probs: Vec<[f64; NUM_AUS]> = preds.iter().map(|p| p.au_probs).collect();
    let au_gold: Vec<Option<[u8; NUM_AUS]>> = golds.iter().map(|g| g.action_units).collect();
    let (p_au, au_f1) = au_macro_f1(&au_probs, &au_gold);

    let va: Vec<([f64; 2], [f64; 2])> = preds
        .iter()
        .zip(golds)
        .filter_map(|(p, g)| g.va.map(|v| (p.va, v)))
        .collect();
    let dim = |d: usize| {
        let x: Vec<f64> = va.iter().map(|(p, _)| p[d]).collect();
        let y: Vec<f64> = va.iter().map(|(_, g)| g[d]).collect();
        ccc(&x, &y).map(|t| t.rho)
    };
    let (ccc_valence, ccc_arousal, va_defined) = match (dim(0), dim(1)) {
        (Some(v), Some(a)) => (v, a, true),
        _ => (0.0, 0.0, false),
    };
    let p_va = (ccc_valence + ccc_arousal) / 2.0;

    MtlScore {
        p_va,
        p_exp,
        p_au,
        p_mtl: p_va + p_exp + p_au,
        ccc_valence,
        ccc_arousal,
        exp_f1,
        au_f1,
        va_defined,
    }
}
