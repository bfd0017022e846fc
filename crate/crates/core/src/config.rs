//! Plain-text `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Unknown
//! or repeated keys are errors. Missing keys take their defaults, and
//! [`TrainConfig::to_kv`] / [`SynthConfig::to_kv`] write every key so that a
//! dumped config reproduces a run exactly.
//!
//! Run config keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | master seed | 0 |
//! | `epochs` | training epochs | 30 |
//! | `batch_size` | samples per step | 64 |
//! | `lr_base` | Adam rate, backbone | 0.001 |
//! | `lr_heads` | Adam rate, all three heads | 0.01 |
//! | `mode` | `MFAR`, `SS-MFAR`, `SS-MFAR-NO-KL` | `SS-MFAR` |
//! | `imbalance` | `reweight` or `resample` | `reweight` |
//! | `lambda_sup`, `lambda_unsup`, `lambda_cons` | expression loss weights | 0.5, 1, 0.1 |
//! | `beta`, `gamma`, `momentum` | threshold parameters | 0.95, e, 0.9 |
//! | `crop_padding`, `flip_prob` | weak augmentation | 2, 0.5 |
//! | `strong_ops` | comma list of `brightness,contrast,rotation,cutout` | all four |
//! | `brightness_max`, `contrast_max`, `rotation_max_deg`, `cutout_max_area` | op magnitude caps | 0.3, 0.5, 15, 0.25 |
//! | `ops_per_image` | strong ops per view | 2 |
//! | `hidden`, `feature_dim`, `exp_hidden`, `va_hidden` | layer widths | 64, 32, 32, 32 |
//!
//! Synthetic data keys: `train_count`, `val_count`, `image_size`,
//! `class_priors` (8 comma-separated weights), `mask_exp`, `mask_va`,
//! `mask_au`, `noise`, `amplitude`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{AugConfig, StrongOp};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Mode};
use crate::pseudo_label::ThresholdConfig;
use crate::NUM_EXPRESSIONS;

/// Parsed key/value pairs with the line each came from.
#[derive(Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value",
                    i + 1
                )));
            };
            let key = k.trim().to_string();
            if entries
                .insert(key.clone(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: repeated key {key:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: invalid value {v:?} for {key}"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::Config(format!("line {line}: invalid list item {s:?} for {key}"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config(format!("line {line}: unknown key {k:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Imbalance {
    /// Inverse-frequency class weights in the supervised CE.
    Reweight,
    /// Class-balanced sampling of labeled samples, unweighted CE.
    Resample,
}

impl FromStr for Imbalance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reweight" => Ok(Imbalance::Reweight),
            "resample" => Ok(Imbalance::Resample),
            _ => Err(Error::Config(format!("unknown imbalance mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for Imbalance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Imbalance::Reweight => "reweight",
            Imbalance::Resample => "resample",
        })
    }
}

/// Layer widths; the input size comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub hidden: usize,
    pub feature_dim: usize,
    pub exp_hidden: usize,
    pub va_hidden: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature_dim: 32,
            exp_hidden: 32,
            va_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub lr_heads: f64,
    pub mode: Mode,
    pub imbalance: Imbalance,
    pub loss_weights: LossWeights,
    pub thresholds: ThresholdConfig,
    pub aug: AugConfig,
    pub widths: Widths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 64,
            lr_base: 0.001,
            lr_heads: 0.01,
            mode: Mode::SsMfar,
            imbalance: Imbalance::Reweight,
            loss_weights: LossWeights::default(),
            thresholds: ThresholdConfig::default(),
            aug: AugConfig::default(),
            widths: Widths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, v) in [("lr_base", self.lr_base), ("lr_heads", self.lr_heads)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let w = &self.loss_weights;
        for (name, v) in [
            ("lambda_sup", w.supervised),
            ("lambda_unsup", w.unsupervised),
            ("lambda_cons", w.consistency),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        self.thresholds.validate()?;
        self.aug.validate()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = Self::default();
        let ops = match kv.take_list::<String>("strong_ops")? {
            None => d.aug.strong_ops.clone(),
            Some(names) => names
                .iter()
                .map(|n| {
                    StrongOp::parse(n)
                        .ok_or_else(|| Error::Config(format!("unknown strong op {n:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let cfg = Self {
            seed: kv.take("seed", d.seed)?,
            epochs: kv.take("epochs", d.epochs)?,
            batch_size: kv.take("batch_size", d.batch_size)?,
            lr_base: kv.take("lr_base", d.lr_base)?,
            lr_heads: kv.take("lr_heads", d.lr_heads)?,
            mode: kv.take("mode", d.mode)?,
            imbalance: kv.take("imbalance", d.imbalance)?,
            loss_weights: LossWeights {
                supervised: kv.take("lambda_sup", d.loss_weights.supervised)?,
                unsupervised: kv.take("lambda_unsup", d.loss_weights.unsupervised)?,
                consistency: kv.take("lambda_cons", d.loss_weights.consistency)?,
            },
            thresholds: ThresholdConfig {
                beta: kv.take("beta", d.thresholds.beta)?,
                gamma: kv.take("gamma", d.thresholds.gamma)?,
                momentum: kv.take("momentum", d.thresholds.momentum)?,
            },
            aug: AugConfig {
                crop_padding: kv.take("crop_padding", d.aug.crop_padding)?,
                flip_prob: kv.take("flip_prob", d.aug.flip_prob)?,
                strong_ops: ops,
                brightness_max: kv.take("brightness_max", d.aug.brightness_max)?,
                contrast_max: kv.take("contrast_max", d.aug.contrast_max)?,
                rotation_max_deg: kv.take("rotation_max_deg", d.aug.rotation_max_deg)?,
                cutout_max_area: kv.take("cutout_max_area", d.aug.cutout_max_area)?,
                ops_per_image: kv.take("ops_per_image", d.aug.ops_per_image)?,
            },
            widths: Widths {
                hidden: kv.take("hidden", d.widths.hidden)?,
                feature_dim: kv.take("feature_dim", d.widths.feature_dim)?,
                exp_hidden: kv.take("exp_hidden", d.widths.exp_hidden)?,
                va_hidden: kv.take("va_hidden", d.widths.va_hidden)?,
            },
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> String {
        let ops: Vec<&str> = self.aug.strong_ops.iter().map(|o| o.name()).collect();
        let mut s = String::from("# resolved run config\n");
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_base", self.lr_base.to_string()),
            ("lr_heads", self.lr_heads.to_string()),
            ("mode", self.mode.to_string()),
            ("imbalance", self.imbalance.to_string()),
            ("lambda_sup", self.loss_weights.supervised.to_string()),
            ("lambda_unsup", self.loss_weights.unsupervised.to_string()),
            ("lambda_cons", self.loss_weights.consistency.to_string()),
            ("beta", self.thresholds.beta.to_string()),
            ("gamma", self.thresholds.gamma.to_string()),
            ("momentum", self.thresholds.momentum.to_string()),
            ("crop_padding", self.aug.crop_padding.to_string()),
            ("flip_prob", self.aug.flip_prob.to_string()),
            ("strong_ops", ops.join(",")),
            ("brightness_max", self.aug.brightness_max.to_string()),
            ("contrast_max", self.aug.contrast_max.to_string()),
            ("rotation_max_deg", self.aug.rotation_max_deg.to_string()),
            ("cutout_max_area", self.aug.cutout_max_area.to_string()),
            ("ops_per_image", self.aug.ops_per_image.to_string()),
            ("hidden", self.widths.hidden.to_string()),
            ("feature_dim", self.widths.feature_dim.to_string()),
            ("exp_hidden", self.widths.exp_hidden.to_string()),
            ("va_hidden", self.widths.va_hidden.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_count: usize,
    pub val_count: usize,
    pub image_size: usize,
    pub class_priors: [f64; NUM_EXPRESSIONS],
    /// Label-masking rates, applied to the training split only.
    pub mask_exp: f64,
    pub mask_va: f64,
    pub mask_au: f64,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise: f64,
    /// Template contrast around mid-gray.
    pub amplitude: f64,
    /// Gaussian noise standard deviation on valence/arousal targets.
    pub va_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_count: 2000,
            val_count: 500,
            image_size: 16,
            class_priors: [0.22, 0.06, 0.06, 0.2, 0.12, 0.08, 0.18, 0.08],
            mask_exp: 0.4,
            mask_va: 0.2,
            mask_au: 0.2,
            noise: 0.25,
            amplitude: 0.12,
            va_noise: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("mask_exp", self.mask_exp),
            ("mask_va", self.mask_va),
            ("mask_au", self.mask_au),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0, 1]")));
            }
        }
        if self.image_size < 2 {
            return Err(Error::Config("image_size must be at least 2".into()));
        }
        if self
            .class_priors
            .iter()
            .any(|&p| !(p >= 0.0 && p.is_finite()))
            || self.class_priors.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "class_priors must be non-negative with positive sum".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude <= 0.5) {
            return Err(Error::Config("amplitude outside [0, 0.5]".into()));
        }
        if !(self.va_noise >= 0.0 && self.va_noise.is_finite()) {
            return Err(Error::Config("va_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = Self::default();
        let priors = match kv.take_list::<f64>("class_priors")? {
            None => d.class_priors,
            Some(v) => v.try_into().map_err(|v: Vec<f64>| {
                Error::Config(format!("class_priors needs 8 values, got {}", v.len()))
            })?,
        };
        let cfg = Self {
            train_count: kv.take("train_count", d.train_count)?,
            val_count: kv.take("val_count", d.val_count)?,
            image_size: kv.take("image_size", d.image_size)?,
            class_priors: priors,
            mask_exp: kv.take("mask_exp", d.mask_exp)?,
            mask_va: kv.take("mask_va", d.mask_va)?,
            mask_au: kv.take("mask_au", d.mask_au)?,
            noise: kv.take("noise", d.noise)?,
            amplitude: kv.take("amplitude", d.amplitude)?,
            va_noise: kv.take("va_noise", d.va_noise)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let priors: Vec<String> = self.class_priors.iter().map(f64::to_string).collect();
        format!(
            "train_count = {}\nval_count = {}\nimage_size = {}\nclass_priors = {}\nmask_exp = {}\nmask_va = {}\nmask_au = {}\nnoise = {}\namplitude = {}\nva_noise = {}\n",
            self.train_count,
            self.val_count,
            self.image_size,
            priors.join(","),
            self.mask_exp,
            self.mask_va,
            self.mask_au,
            self.noise,
            self.amplitude,
            self.va_noise
        )
    }
}
