//! Seeded synthetic datasets standing in for real face crops.
//!
//! Each expression class has a mean image built from three horizontally
//! symmetric patterns (a vertical ramp, a center/surround blob and vertical
//! stripes) whose signs encode the class bits. Samples add per-pattern
//! amplitude jitter and Gaussian pixel noise and are quantized to 8 bits.
//! Valence/arousal come from a fixed class-to-point map plus noise; action
//! units are class-conditioned Bernoulli draws. Training labels are then
//! masked at the configured per-task rates.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::SynthConfig;
use crate::data::{
    dataset_stats, serialize_manifest, AnnotationSet, Dataset, DatasetStats, Sample,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Stream};
use crate::{NUM_AUS, NUM_EXPRESSIONS};

const VA_RADIUS: f64 = 0.6;
const AU_ON: f64 = 0.85;
const AU_OFF: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// A dataset with its images held in memory, index-aligned with the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub dataset: Dataset,
    pub images: Vec<Image>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(&self.dataset)
    }
}

/// The three unit-range patterns at pixel `(r, c)`.
fn patterns(size: usize, r: usize, c: usize) -> [f64; 3] {
    let mid = (size as f64 - 1.0) / 2.0;
    let (y, x) = ((r as f64 - mid) / mid, (c as f64 - mid) / mid);
    let ramp = y;
    let dist = (x * x + y * y).sqrt() / std::f64::consts::SQRT_2;
    let blob = (PI * dist).cos();
    let stripes = (2.0 * PI * x).cos();
    [ramp, blob, stripes]
}

fn class_signs(class: usize) -> [f64; 3] {
    [0, 1, 2].map(|b| if class >> b & 1 == 1 { 1.0 } else { -1.0 })
}

/// Noise-free mean image of a class.
pub fn class_template(class: usize, size: usize, amplitude: f64) -> Image {
    let s = class_signs(class);
    let mut img = Image::filled(size, size, 0.0);
    for r in 0..size {
        for c in 0..size {
            let f = patterns(size, r, c);
            let v = 0.5 + amplitude * (s[0] * f[0] + s[1] * f[1] + s[2] * f[2]);
            img.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Valence/arousal center of a class: evenly spaced points on a circle.
pub fn class_va(class: usize) -> [f64; 2] {
    let angle = 2.0 * PI * class as f64 / NUM_EXPRESSIONS as f64 + PI / 8.0;
    [VA_RADIUS * angle.cos(), VA_RADIUS * angle.sin()]
}

/// Whether AU `unit` is usually active for `class`. Every unit is a
/// half-space over the class sign bits: units 0-5 follow one bit (four
/// classes each); units 6-11 fire for a cube corner and the two neighbours
/// sharing its leading bit (three classes each).
pub fn au_active(class: usize, unit: usize) -> bool {
    let s = class_signs(class);
    let i = unit % 3;
    let polarity = if unit % 6 < 3 { 1.0 } else { -1.0 };
    if unit < 6 {
        s[i] == polarity
    } else {
        polarity * (2.0 * s[i] + s[(i + 1) % 3] + s[(i + 2) % 3]) >= 2.0
    }
}

fn generate_sample(
    cfg: &SynthConfig,
    split: Split,
    index: usize,
    seed: u64,
    classes: &WeightedIndex<f64>,
) -> (Sample, Image) {
    let mut r = rng::substream(seed, Stream::Synth, &[split as u64, index as u64]);
    let class = classes.sample(&mut r);
    let size = cfg.image_size;

    let s = class_signs(class);
    let jitter: [f64; 3] = [0; 3].map(|_| 0.5 + r.random::<f64>());
    let mut img = Image::filled(size, size, 0.0);
    for row in 0..size {
        for col in 0..size {
            let f = patterns(size, row, col);
            let mean = 0.5 + cfg.amplitude * (0..3).map(|k| s[k] * jitter[k] * f[k]).sum::<f64>();
            let z: f64 = r.sample(StandardNormal);
            img.set(row, col, mean + cfg.noise * z);
        }
    }
    img.clamp_unit();
    let img = Image::from_bytes(size, size, &img.to_bytes()).expect("shape");

    let center = class_va(class);
    let va = center.map(|m| {
        let z: f64 = r.sample(StandardNormal);
        (m + cfg.va_noise * z).clamp(-1.0, 1.0)
    });
    let mut aus = [0u8; NUM_AUS];
    for (k, a) in aus.iter_mut().enumerate() {
        let p = if au_active(class, k) { AU_ON } else { AU_OFF };
        *a = u8::from(r.random::<f64>() < p);
    }

    let masked = |rate: f64, r: &mut rng::Rng| {
        let u = r.random::<f64>();
        split == Split::Train && u < rate
    };
    let drop_exp = masked(cfg.mask_exp, &mut r);
    let drop_va = masked(cfg.mask_va, &mut r);
    let drop_au = masked(cfg.mask_au, &mut r);

    let path = format!("{}/{index:05}.pgm", split.name());
    let sample = Sample {
        id: path.clone(),
        image_ref: PathBuf::from(path),
        annotations: AnnotationSet {
            va: (!drop_va).then_some(va),
            expression: (!drop_exp).then_some(class as u8),
            action_units: (!drop_au).then_some(aus),
        },
    };
    (sample, img)
}

pub fn generate_split(cfg: &SynthConfig, split: Split, seed: u64) -> Result<LabeledImages> {
    cfg.validate()?;
    let count = match split {
        Split::Train => cfg.train_count,
        Split::Val => cfg.val_count,
    };
    let classes = WeightedIndex::new(cfg.class_priors).map_err(|e| Error::Config(e.to_string()))?;
    let (samples, images): (Vec<_>, Vec<_>) = (0..count)
        .map(|i| generate_sample(cfg, split, i, seed, &classes))
        .unzip();
    Ok(LabeledImages {
        dataset: Dataset::new(samples)?,
        images,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: LabeledImages,
    pub val: LabeledImages,
}

/// Training and validation splits; label masking applies to training only.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticData> {
    Ok(SyntheticData {
        train: generate_split(cfg, Split::Train, seed)?,
        val: generate_split(cfg, Split::Val, seed)?,
    })
}

/// Writes `<dir>/<split>.csv` and `<dir>/<split>/NNNNN.pgm`.
pub fn write_split(dir: &Path, split: Split, data: &LabeledImages) -> Result<()> {
    let img_dir = dir.join(split.name());
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (s, img) in data.dataset.samples.iter().zip(&data.images) {
        img.write_pgm(&dir.join(&s.image_ref))?;
    }
    let manifest = dir.join(format!("{}.csv", split.name()));
    fs::write(&manifest, serialize_manifest(&data.dataset)).map_err(|e| Error::io(&manifest, e))
}

pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<()> {
    write_split(dir, Split::Train, &data.train)?;
    write_split(dir, Split::Val, &data.val)
}

/// Reads `<dir>/<split>.csv` and every image it references (paths relative
/// to `dir`). All images must share one size.
pub fn load_split(dir: &Path, split: Split) -> Result<LabeledImages> {
    let manifest = dir.join(format!("{}.csv", split.name()));
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let dataset = crate::data::parse_manifest(&text)?;
    let images = dataset
        .samples
        .iter()
        .map(|s| Image::read_pgm(&dir.join(&s.image_ref)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = images.first() {
        if let Some((s, img)) = dataset
            .samples
            .iter()
            .zip(&images)
            .find(|(_, i)| (i.height, i.width) != (first.height, first.width))
        {
            return Err(Error::Image {
                path: s.image_ref.clone(),
                msg: format!(
                    "size {}x{} differs from {}x{}",
                    img.height, img.width, first.height, first.width
                ),
            });
        }
    }
    Ok(LabeledImages { dataset, images })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_count: 50,
            val_count: 10,
            image_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn empty_when_count_zero() {
        let cfg = SynthConfig {
            train_count: 0,
            val_count: 0,
            ..small()
        };
        let d = generate_synthetic(&cfg, 1).unwrap();
        assert!(d.train.is_empty() && d.val.is_empty());
    }

    #[test]
    fn full_masking_removes_every_expression() {
        let cfg = SynthConfig {
            mask_exp: 1.0,
            ..small()
        };
        let d = generate_split(&cfg, Split::Train, 3).unwrap();
        assert!(d
            .dataset
            .samples
            .iter()
            .all(|s| s.annotations.expression.is_none()));
        let v = generate_split(&cfg, Split::Val, 3).unwrap();
        assert!(v
            .dataset
            .samples
            .iter()
            .all(|s| s.annotations.expression.is_some()));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic(&small(), 5).unwrap();
        let b = generate_synthetic(&small(), 5).unwrap();
        let c = generate_synthetic(&small(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn rejects_bad_rates() {
        let cfg = SynthConfig {
            mask_va: -0.1,
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn templates_are_distinct_and_symmetric() {
        let t: Vec<Image> = (0..8).map(|c| class_template(c, 16, 0.12)).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                let d: f64 = t[a]
                    .data
                    .iter()
                    .zip(&t[b].data)
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                assert!(d > 1.0, "{a} vs {b}");
            }
            for r in 0..16 {
                for c in 0..16 {
                    assert!((t[a].get(r, c) - t[a].get(r, 15 - c)).abs() < 1e-12);
                }
            }
        }
        let pts: Vec<[f64; 2]> = (0..8).map(class_va).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                assert_ne!(pts[a], pts[b]);
            }
        }
        for k in 0..NUM_AUS {
            let n = (0..8).filter(|&c| au_active(c, k)).count();
            assert_eq!(n, if k < 6 { 4 } else { 3 }, "unit {k}");
        }
        let patterns: std::collections::HashSet<Vec<bool>> = (0..NUM_AUS)
            .map(|k| (0..8).map(|c| au_active(c, k)).collect())
            .collect();
        assert_eq!(patterns.len(), NUM_AUS);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_synthetic(&small(), 9).unwrap();
        write_synthetic(dir.path(), &d).unwrap();
        let train = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(train, d.train);
        let val = load_split(dir.path(), Split::Val).unwrap();
        assert_eq!(val, d.val);
    }
}
