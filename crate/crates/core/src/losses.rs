//! Loss terms and their gradients with respect to head outputs.
//!
//! Every batch loss takes per-sample labels as `Option`s; `None` masks the
//! sample out. Means are taken over the masked-in samples only, so a
//! masked-out sample contributes exactly zero value and zero gradient. A term
//! with nothing masked in is 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{log_softmax, sigmoid, softmax};
use crate::{NUM_AUS, NUM_EXPRESSIONS};

/// Floor applied to probabilities inside logs.
pub const PROB_EPS: f64 = 1e-8;

pub type ExpLogits = [f64; NUM_EXPRESSIONS];
pub type AuLogits = [f64; NUM_AUS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub supervised: f64,
    pub unsupervised: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            supervised: 0.5,
            unsupervised: 1.0,
            consistency: 0.1,
        }
    }
}

/// Training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Supervised multi-task only; expression loss is the plain supervised CE.
    #[serde(rename = "MFAR")]
    Mfar,
    /// Supervised plus pseudo-label CE and consistency KL.
    #[serde(rename = "SS-MFAR")]
    SsMfar,
    /// Semi-supervised without the consistency term.
    #[serde(rename = "SS-MFAR-NO-KL")]
    SsMfarNoKl,
}

impl Mode {
    pub fn is_semi_supervised(self) -> bool {
        !matches!(self, Mode::Mfar)
    }

    /// Effective `(supervised, unsupervised, consistency)` coefficients.
    pub fn coefficients(self, w: &LossWeights) -> (f64, f64, f64) {
        match self {
            Mode::Mfar => (1.0, 0.0, 0.0),
            Mode::SsMfar => (w.supervised, w.unsupervised, w.consistency),
            Mode::SsMfarNoKl => (w.supervised, w.unsupervised, 0.0),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mfar => "MFAR",
            Mode::SsMfar => "SS-MFAR",
            Mode::SsMfarNoKl => "SS-MFAR-NO-KL",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MFAR" => Ok(Mode::Mfar),
            "SS-MFAR" => Ok(Mode::SsMfar),
            "SS-MFAR-NO-KL" => Ok(Mode::SsMfarNoKl),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected MFAR, SS-MFAR or SS-MFAR-NO-KL)"
            ))),
        }
    }
}

/// Unweighted loss terms of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub exp_sup: f64,
    pub exp_unsup: f64,
    pub exp_cons: f64,
    pub au: f64,
    pub va: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_exp_sup: f64,
    pub l_exp_unsup: f64,
    pub l_exp_cons: f64,
    pub l_au: f64,
    pub l_va: f64,
    pub l_exp: f64,
    pub total: f64,
}

/// Combines the terms. In MFAR mode the semi-supervised terms are reported as
/// 0 and the expression loss is the bare supervised CE.
pub fn overall_loss(c: &LossComponents, weights: &LossWeights, mode: Mode) -> LossBreakdown {
    let (ks, ku, kc) = mode.coefficients(weights);
    let (unsup, cons) = match mode {
        Mode::Mfar => (0.0, 0.0),
        _ => (c.exp_unsup, c.exp_cons),
    };
    let l_exp = ks * c.exp_sup + ku * unsup + kc * cons;
    LossBreakdown {
        l_exp_sup: c.exp_sup,
        l_exp_unsup: unsup,
        l_exp_cons: cons,
        l_au: c.au,
        l_va: c.va,
        l_exp,
        total: l_exp + c.au + c.va,
    }
}

/// Loss value with per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grads: Vec<G>,
}

/// Mean over labeled samples of `w[y] * -log softmax(z)[y]`.
pub fn weighted_cross_entropy(
    logits: &[ExpLogits],
    labels: &[Option<usize>],
    class_weights: &[f64; NUM_EXPRESSIONS],
) -> Result<LossGrad<ExpLogits>> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut grads = vec![[0.0; NUM_EXPRESSIONS]; logits.len()];
    let count = labels.iter().flatten().count();
    if count == 0 {
        return Ok(LossGrad { value: 0.0, grads });
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for ((z, label), g) in logits.iter().zip(labels).zip(&mut grads) {
        let Some(y) = *label else { continue };
        if y >= NUM_EXPRESSIONS {
            return Err(Error::Label(format!("expression label {y} out of range")));
        }
        let w = class_weights[y];
        sum += w * -log_softmax(z)[y];
        let p = softmax(z);
        for (k, gk) in g.iter_mut().enumerate() {
            let onehot = if k == y { 1.0 } else { 0.0 };
            *gk = w * (p[k] - onehot) * inv;
        }
    }
    Ok(LossGrad {
        value: sum * inv,
        grads,
    })
}

/// Unweighted CE of strong-view logits against pseudo-labels; `None` marks a
/// non-confident sample.
pub fn unsupervised_ce(
    strong_logits: &[ExpLogits],
    pseudo_labels: &[Option<usize>],
) -> Result<LossGrad<ExpLogits>> {
    weighted_cross_entropy(strong_logits, pseudo_labels, &[1.0; NUM_EXPRESSIONS])
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean over (labeled sample, unit) pairs of
/// `-[w * y * log s(z) + (1 - y) * log(1 - s(z))]`.
pub fn weighted_bce(
    logits: &[AuLogits],
    labels: &[Option<[u8; NUM_AUS]>],
    pos_weights: &[f64; NUM_AUS],
) -> LossGrad<AuLogits> {
    assert_eq!(
        logits.len(),
        labels.len(),
        "AU logits/labels length mismatch"
    );
    let mut grads = vec![[0.0; NUM_AUS]; logits.len()];
    let count = labels.iter().flatten().count() * NUM_AUS;
    if count == 0 {
        return LossGrad { value: 0.0, grads };
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for ((z, label), g) in logits.iter().zip(labels).zip(&mut grads) {
        let Some(y) = label else { continue };
        for k in 0..NUM_AUS {
            let w = pos_weights[k];
            let zk = z[k];
            if y[k] == 1 {
                // -log s(z) = softplus(-z)
                sum += w * softplus(-zk);
                g[k] = -w * sigmoid(-zk) * inv;
            } else {
                // -log(1 - s(z)) = softplus(z)
                sum += softplus(zk);
                g[k] = sigmoid(zk) * inv;
            }
        }
    }
    LossGrad {
        value: sum * inv,
        grads,
    }
}

/// Population moments and the concordance correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccTerms {
    pub cov: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub rho: f64,
}

/// `rho = 2 s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2)` with 1/n moments.
/// Returns `None` for fewer than two points (or unequal lengths). A zero
/// denominator gives `rho = 0`.
pub fn ccc(x: &[f64], y: &[f64]) -> Option<CccTerms> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut cov, mut var_x, mut var_y) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    cov /= n;
    var_x /= n;
    var_y /= n;
    let denom = var_x + var_y + (mean_x - mean_y).powi(2);
    let rho = if denom > 0.0 {
        (2.0 * cov / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Some(CccTerms {
        cov,
        var_x,
        var_y,
        mean_x,
        mean_y,
        rho,
    })
}

/// `d rho / d x_i` holding `y` fixed.
fn ccc_grad_x(x: &[f64], y: &[f64], t: &CccTerms) -> Vec<f64> {
    let n = x.len() as f64;
    let num = 2.0 * t.cov;
    let denom = t.var_x + t.var_y + (t.mean_x - t.mean_y).powi(2);
    if denom <= 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let d_num = 2.0 * (yi - t.mean_y) / n;
            let d_denom = 2.0 * (xi - t.mean_x) / n + 2.0 * (t.mean_x - t.mean_y) / n;
            (d_num * denom - num * d_denom) / (denom * denom)
        })
        .collect()
}

/// Mean of `1 - rho` over valence and arousal, on samples with gold labels.
/// Fewer than two labeled samples gives 0.
pub fn ccc_loss(pred: &[[f64; 2]], gold: &[Option<[f64; 2]>]) -> LossGrad<[f64; 2]> {
    assert_eq!(
        pred.len(),
        gold.len(),
        "VA prediction/label length mismatch"
    );
    let mut grads = vec![[0.0; 2]; pred.len()];
    let idx: Vec<usize> = (0..pred.len()).filter(|&i| gold[i].is_some()).collect();
    if idx.len() < 2 {
        return LossGrad { value: 0.0, grads };
    }
    let mut value = 0.0;
    for d in 0..2 {
        let x: Vec<f64> = idx.iter().map(|&i| pred[i][d]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| gold[i].unwrap()[d]).collect();
        let t = ccc(&x, &y).expect("at least two points");
        value += 0.5 * (1.0 - t.rho);
        for (&i, gx) in idx.iter().zip(ccc_grad_x(&x, &y, &t)) {
            grads[i][d] = -0.5 * gx;
        }
    }
    LossGrad { value, grads }
}

fn floor_normalize(p: &[f64]) -> (Vec<f64>, f64) {
    let floored: Vec<f64> = p.iter().map(|&v| v.max(PROB_EPS)).collect();
    let s: f64 = floored.iter().sum();
    (floored.iter().map(|v| v / s).collect(), s)
}

/// `sum p log(p/q) + sum q log(q/p)` after flooring both distributions at
/// 1e-8 and renormalizing.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distribution length mismatch");
    let (p, _) = floor_normalize(p);
    let (q, _) = floor_normalize(q);
    p.iter()
        .zip(&q)
        .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
        .sum()
}

/// Gradient of `symmetric_kl(softmax(zp), softmax(zq))` with respect to `zp`.
fn symmetric_kl_grad_logits(zp: &[f64], zq: &[f64]) -> Vec<f64> {
    let p = softmax(zp);
    let q = softmax(zq);
    let (pn, s) = floor_normalize(&p);
    let (qn, _) = floor_normalize(&q);
    // dL/dpn
    let g: Vec<f64> = pn
        .iter()
        .zip(&qn)
        .map(|(a, b)| (a / b).ln() + 1.0 - b / a)
        .collect();
    // through renormalization and the floor
    let g_dot: f64 = g.iter().zip(&pn).map(|(a, b)| a * b).sum();
    let g_p: Vec<f64> = g
        .iter()
        .zip(&p)
        .map(|(gk, &pk)| if pk > PROB_EPS { (gk - g_dot) / s } else { 0.0 })
        .collect();
    // through softmax
    let h_dot: f64 = g_p.iter().zip(&p).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(&g_p)
        .map(|(pk, hk)| pk * (hk - h_dot))
        .collect()
}

/// Mean symmetric KL between weak and strong distributions over masked-in
/// (non-confident) samples.
pub fn consistency_loss(weak_probs: &[Vec<f64>], strong_probs: &[Vec<f64>], mask: &[bool]) -> f64 {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return 0.0;
    }
    let sum: f64 = weak_probs
        .iter()
        .zip(strong_probs)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, q), _)| symmetric_kl(p, q))
        .sum();
    sum / count as f64
}

/// Consistency loss from logits, with gradients for both views.
pub fn consistency_loss_grad(
    weak_logits: &[ExpLogits],
    strong_logits: &[ExpLogits],
    mask: &[bool],
) -> (f64, Vec<ExpLogits>, Vec<ExpLogits>) {
    let n = weak_logits.len();
    let mut gw = vec![[0.0; NUM_EXPRESSIONS]; n];
    let mut gs = vec![[0.0; NUM_EXPRESSIONS]; n];
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return (0.0, gw, gs);
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for i in (0..n).filter(|&i| mask[i]) {
        let (zw, zs) = (&weak_logits[i], &strong_logits[i]);
        sum += symmetric_kl(&softmax(zw), &softmax(zs));
        for (g, v) in gw[i].iter_mut().zip(symmetric_kl_grad_logits(zw, zs)) {
            *g = v * inv;
        }
        for (g, v) in gs[i].iter_mut().zip(symmetric_kl_grad_logits(zs, zw)) {
            *g = v * inv;
        }
    }
    (sum * inv, gw, gs)
}
