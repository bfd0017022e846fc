//! The model: a two-layer rectifier backbone whose output is L2-normalized
//! into a feature vector, and three heads reading that feature.
//!
//! ```text
//! pixels -> linear -> relu -> linear -> l2-normalize = f
//! f -> linear -> relu -> linear        expression logits (8)
//! f -> linear                          action-unit logits (12)
//! f -> linear -> relu -> linear -> tanh   valence, arousal
//! ```
//!
//! Gradients are computed by hand in reverse mode. Per-sample work may run on
//! a thread pool; reductions over samples always use fixed chunk boundaries in
//! sample order, so results do not depend on the number of threads.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Stream};
use crate::{NUM_AUS, NUM_EXPRESSIONS};

/// Added under the square root of the feature norm.
pub const NORM_EPS: f64 = 1e-8;

/// Samples per gradient-reduction chunk. Fixed so that summation order does
/// not depend on the thread pool.
const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub exp_hidden: usize,
    pub va_hidden: usize,
}

impl ModelConfig {
    pub fn new(input_height: usize, input_width: usize) -> Self {
        Self {
            input_height,
            input_width,
            hidden: 64,
            feature_dim: 32,
            exp_hidden: 32,
            va_hidden: 32,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim),
            ("exp_hidden", self.exp_hidden),
            ("va_hidden", self.va_hidden),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Hex digest identifying the architecture, stored in checkpoints.
    pub fn hash(&self) -> String {
        let canon = format!(
            "in={}x{};hidden={};feature={};exp_hidden={};va_hidden={};exp={};au={}",
            self.input_height,
            self.input_width,
            self.hidden,
            self.feature_dim,
            self.exp_hidden,
            self.va_hidden,
            NUM_EXPRESSIONS,
            NUM_AUS
        );
        let digest = Sha256::digest(canon.as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dense layer, weights row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }

    /// Accumulates `dW += g x^T`, `db += g` into `grad` and returns `W^T g`
    /// into `back` (when given).
    fn backprop(&self, x: &[f64], g: &[f64], grad: &mut Linear, back: Option<&mut [f64]>) {
        for ((gw_row, gb), &gi) in grad
            .weight
            .chunks_exact_mut(self.in_dim)
            .zip(grad.bias.iter_mut())
            .zip(g)
        {
            if gi == 0.0 {
                continue;
            }
            *gb += gi;
            for (gw, xi) in gw_row.iter_mut().zip(x) {
                *gw += gi * xi;
            }
        }
        if let Some(back) = back {
            for (row, &gi) in self.weight.chunks_exact(self.in_dim).zip(g) {
                if gi == 0.0 {
                    continue;
                }
                for (b, w) in back.iter_mut().zip(row) {
                    *b += w * gi;
                }
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Layer order within [`Params::layers`].
pub mod layer {
    pub const BACKBONE_HIDDEN: usize = 0;
    pub const BACKBONE_OUT: usize = 1;
    pub const EXP_HIDDEN: usize = 2;
    pub const EXP_OUT: usize = 3;
    pub const AU_OUT: usize = 4;
    pub const VA_HIDDEN: usize = 5;
    pub const VA_OUT: usize = 6;
    pub const COUNT: usize = 7;
    pub const NAMES: [&str; COUNT] = [
        "backbone_hidden",
        "backbone_out",
        "exp_hidden",
        "exp_out",
        "au_out",
        "va_hidden",
        "va_out",
    ];
}

/// Which optimizer group a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Heads,
}

pub fn layer_group(index: usize) -> ParamGroup {
    if index <= layer::BACKBONE_OUT {
        ParamGroup::Backbone
    } else {
        ParamGroup::Heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub config: ModelConfig,
    pub layers: Vec<Linear>,
}

/// Gradients share the parameter layout.
pub type Grads = Params;

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        let shapes = [
            (c.input_dim(), c.hidden),
            (c.hidden, c.feature_dim),
            (c.feature_dim, c.exp_hidden),
            (c.exp_hidden, NUM_EXPRESSIONS),
            (c.feature_dim, NUM_AUS),
            (c.feature_dim, c.va_hidden),
            (c.va_hidden, 2),
        ];
        Self {
            config: c.clone(),
            layers: shapes.iter().map(|&(i, o)| Linear::zeros(i, o)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight
                .iter_mut()
                .zip(&b.weight)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Visits every scalar with its layer index.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.weight.iter_mut().for_each(|x| f(i, x));
            l.bias.iter_mut().for_each(|x| f(i, x));
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut params = Params::zeros(config);
    let mut rng = rng::substream(seed, Stream::Init, &[]);
    for l in &mut params.layers {
        let bound = 1.0 / (l.in_dim as f64).sqrt();
        for w in &mut l.weight {
            *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// Unit-norm feature vector.
    pub features: Vec<f64>,
    pub exp_logits: [f64; NUM_EXPRESSIONS],
    pub au_logits: [f64; NUM_AUS],
    /// `(valence, arousal)` strictly inside `(-1, 1)`.
    pub va: [f64; 2],
}

/// Intermediates of one sample kept for the backward pass.
#[derive(Debug, Clone)]
struct SampleCache {
    pre_hidden: Vec<f64>,
    pre_norm: Vec<f64>,
    norm: f64,
    pre_exp_hidden: Vec<f64>,
    pre_va_hidden: Vec<f64>,
}

/// Result of a forward pass over a batch, with cached intermediates.
#[derive(Debug, Clone)]
pub struct Forward {
    pub outputs: Vec<HeadOutputs>,
    caches: Vec<SampleCache>,
}

/// Loss gradient with respect to one sample's head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadGrad {
    pub exp_logits: [f64; NUM_EXPRESSIONS],
    pub au_logits: [f64; NUM_AUS],
    /// With respect to the tanh outputs.
    pub va: [f64; 2],
}

impl HeadGrad {
    pub fn is_zero(&self) -> bool {
        self.exp_logits
            .iter()
            .chain(&self.au_logits)
            .chain(&self.va)
            .all(|&g| g == 0.0)
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn forward_one(params: &Params, x: &[f64]) -> (HeadOutputs, SampleCache) {
    let c = &params.config;
    let l = &params.layers;

    let mut pre_hidden = vec![0.0; c.hidden];
    l[layer::BACKBONE_HIDDEN].apply(x, &mut pre_hidden);
    let hidden = relu(&pre_hidden);

    let mut pre_norm = vec![0.0; c.feature_dim];
    l[layer::BACKBONE_OUT].apply(&hidden, &mut pre_norm);
    let norm = (pre_norm.iter().map(|u| u * u).sum::<f64>() + NORM_EPS).sqrt();
    let features: Vec<f64> = pre_norm.iter().map(|u| u / norm).collect();

    let mut pre_exp_hidden = vec![0.0; c.exp_hidden];
    l[layer::EXP_HIDDEN].apply(&features, &mut pre_exp_hidden);
    let exp_hidden = relu(&pre_exp_hidden);
    let mut exp_logits = [0.0; NUM_EXPRESSIONS];
    l[layer::EXP_OUT].apply(&exp_hidden, &mut exp_logits);

    let mut au_logits = [0.0; NUM_AUS];
    l[layer::AU_OUT].apply(&features, &mut au_logits);

    let mut pre_va_hidden = vec![0.0; c.va_hidden];
    l[layer::VA_HIDDEN].apply(&features, &mut pre_va_hidden);
    let va_hidden = relu(&pre_va_hidden);
    let mut va_lin = [0.0; 2];
    l[layer::VA_OUT].apply(&va_hidden, &mut va_lin);
    let va = va_lin.map(f64::tanh);

    (
        HeadOutputs {
            features,
            exp_logits,
            au_logits,
            va,
        },
        SampleCache {
            pre_hidden,
            pre_norm,
            norm,
            pre_exp_hidden,
            pre_va_hidden,
        },
    )
}

fn check_inputs(params: &Params, images: &[Image]) -> Result<()> {
    let c = &params.config;
    for img in images {
        if img.height != c.input_height || img.width != c.input_width {
            return Err(Error::Shape(format!(
                "image {}x{} but model expects {}x{}",
                img.height, img.width, c.input_height, c.input_width
            )));
        }
    }
    Ok(())
}

pub fn forward(params: &Params, images: &[Image]) -> Result<Forward> {
    check_inputs(params, images)?;
    let (outputs, caches): (Vec<_>, Vec<_>) = images
        .par_iter()
        .map(|img| forward_one(params, &img.data))
        .unzip();
    let finite = outputs.iter().all(|o| {
        o.exp_logits
            .iter()
            .chain(&o.au_logits)
            .chain(&o.va)
            .chain(&o.features)
            .all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(Forward { outputs, caches })
}

fn backward_one(
    params: &Params,
    x: &[f64],
    out: &HeadOutputs,
    cache: &SampleCache,
    g: &HeadGrad,
    grads: &mut Grads,
) {
    let c = &params.config;
    let l = &params.layers;
    let gl = &mut grads.layers;
    let mut g_feat = vec![0.0; c.feature_dim];

    // valence/arousal head
    let g_va_lin: Vec<f64> =
        g.va.iter()
            .zip(&out.va)
            .map(|(gv, v)| gv * (1.0 - v * v))
            .collect();
    if g_va_lin.iter().any(|&v| v != 0.0) {
        let va_hidden: Vec<f64> = cache.pre_va_hidden.iter().map(|&v| v.max(0.0)).collect();
        let mut g_hidden = vec![0.0; c.va_hidden];
        l[layer::VA_OUT].backprop(
            &va_hidden,
            &g_va_lin,
            &mut gl[layer::VA_OUT],
            Some(&mut g_hidden),
        );
        for (gh, &pre) in g_hidden.iter_mut().zip(&cache.pre_va_hidden) {
            if pre <= 0.0 {
                *gh = 0.0;
            }
        }
        l[layer::VA_HIDDEN].backprop(
            &out.features,
            &g_hidden,
            &mut gl[layer::VA_HIDDEN],
            Some(&mut g_feat),
        );
    }

    // action-unit head
    l[layer::AU_OUT].backprop(
        &out.features,
        &g.au_logits,
        &mut gl[layer::AU_OUT],
        Some(&mut g_feat),
    );

    // expression head
    if g.exp_logits.iter().any(|&v| v != 0.0) {
        let exp_hidden: Vec<f64> = cache.pre_exp_hidden.iter().map(|&v| v.max(0.0)).collect();
        let mut g_hidden = vec![0.0; c.exp_hidden];
        l[layer::EXP_OUT].backprop(
            &exp_hidden,
            &g.exp_logits,
            &mut gl[layer::EXP_OUT],
            Some(&mut g_hidden),
        );
        for (gh, &pre) in g_hidden.iter_mut().zip(&cache.pre_exp_hidden) {
            if pre <= 0.0 {
                *gh = 0.0;
            }
        }
        l[layer::EXP_HIDDEN].backprop(
            &out.features,
            &g_hidden,
            &mut gl[layer::EXP_HIDDEN],
            Some(&mut g_feat),
        );
    }

    // f = u / sqrt(|u|^2 + eps):  df/du = I/n - u u^T / n^3
    let n = cache.norm;
    let u_dot_g: f64 = cache.pre_norm.iter().zip(&g_feat).map(|(u, g)| u * g).sum();
    let g_pre_norm: Vec<f64> = cache
        .pre_norm
        .iter()
        .zip(&g_feat)
        .map(|(u, gf)| gf / n - u * u_dot_g / (n * n * n))
        .collect();

    let hidden: Vec<f64> = cache.pre_hidden.iter().map(|&v| v.max(0.0)).collect();
    let mut g_hidden = vec![0.0; c.hidden];
    l[layer::BACKBONE_OUT].backprop(
        &hidden,
        &g_pre_norm,
        &mut gl[layer::BACKBONE_OUT],
        Some(&mut g_hidden),
    );
    for (gh, &pre) in g_hidden.iter_mut().zip(&cache.pre_hidden) {
        if pre <= 0.0 {
            *gh = 0.0;
        }
    }
    l[layer::BACKBONE_HIDDEN].backprop(x, &g_hidden, &mut gl[layer::BACKBONE_HIDDEN], None);
}

/// Gradient of `sum_i <head_grads[i], outputs_i>` with respect to every
/// parameter, for the batch the `Forward` was computed on.
pub fn backward(
    params: &Params,
    images: &[Image],
    fwd: &Forward,
    head_grads: &[HeadGrad],
) -> Result<Grads> {
    if images.len() != fwd.outputs.len() || head_grads.len() != fwd.outputs.len() {
        return Err(Error::Shape(format!(
            "backward over {} images, {} cached outputs, {} head gradients",
            images.len(),
            fwd.outputs.len(),
            head_grads.len()
        )));
    }
    check_inputs(params, images)?;
    let n = images.len();
    let chunk_grads: Vec<Grads> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut g = params.zeros_like();
            for i in chunk * REDUCE_CHUNK..((chunk + 1) * REDUCE_CHUNK).min(n) {
                if head_grads[i].is_zero() {
                    continue;
                }
                backward_one(
                    params,
                    &images[i].data,
                    &fwd.outputs[i],
                    &fwd.caches[i],
                    &head_grads[i],
                    &mut g,
                );
            }
            g
        })
        .collect();
    let mut total = params.zeros_like();
    for g in &chunk_grads {
        total.add_assign(g);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(total)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
