//! Weak and strong views of an image.
//!
//! The weak view is a reflect-padded random crop plus a random horizontal
//! flip. The strong view applies the weak pipeline and then a few randomly
//! chosen photometric/geometric operations with random magnitudes, in the
//! spirit of RandAugment but reduced to four grayscale-friendly operations.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Rng, Stream};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const MAX_CUTOUT_AREA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrongOp {
    Brightness,
    Contrast,
    Rotation,
    Cutout,
}

impl StrongOp {
    pub const ALL: [StrongOp; 4] = [
        StrongOp::Brightness,
        StrongOp::Contrast,
        StrongOp::Rotation,
        StrongOp::Cutout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrongOp::Brightness => "brightness",
            StrongOp::Contrast => "contrast",
            StrongOp::Rotation => "rotation",
            StrongOp::Cutout => "cutout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub crop_padding: usize,
    pub flip_prob: f64,
    pub strong_ops: Vec<StrongOp>,
    /// Additive intensity shift drawn from `[-max, max]`.
    pub brightness_max: f64,
    /// Contrast factor `1 + m`, `m` drawn from `[-max, max]`.
    pub contrast_max: f64,
    pub rotation_max_deg: f64,
    /// Largest cutout square as a fraction of the image area.
    pub cutout_max_area: f64,
    pub ops_per_image: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            crop_padding: 2,
            flip_prob: 0.5,
            strong_ops: StrongOp::ALL.to_vec(),
            brightness_max: 0.3,
            contrast_max: 0.5,
            rotation_max_deg: MAX_ROTATION_DEG,
            cutout_max_area: MAX_CUTOUT_AREA,
            ops_per_image: 2,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |name: &str, v: f64, hi: f64| {
            if (0.0..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, {hi}]")))
            }
        };
        in_range("flip_prob", self.flip_prob, 1.0)?;
        in_range("brightness_max", self.brightness_max, 1.0)?;
        in_range("contrast_max", self.contrast_max, 1.0)?;
        in_range("rotation_max_deg", self.rotation_max_deg, MAX_ROTATION_DEG)?;
        in_range("cutout_max_area", self.cutout_max_area, MAX_CUTOUT_AREA)?;
        Ok(())
    }
}

/// Index into `0..n` of position `i` in a reflect-padded axis (edge pixel not
/// repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

pub fn weak_augment(image: &Image, cfg: &AugConfig, rng: &mut Rng) -> Image {
    let p = cfg.crop_padding as i64;
    let dy = (rng.random_range(0..=2 * p) - p) as isize;
    let dx = (rng.random_range(0..=2 * p) - p) as isize;
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let (h, w) = (image.height, image.width);
    let mut out = Image::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let sc = if flip { w - 1 - c } else { c };
            let y = reflect(r as isize + dy, h);
            let x = reflect(sc as isize + dx, w);
            out.set(r, c, image.get(y, x));
        }
    }
    out.clamp_unit();
    out
}

pub fn strong_augment(image: &Image, cfg: &AugConfig, rng: &mut Rng) -> Image {
    let mut out = weak_augment(image, cfg, rng);
    if !cfg.strong_ops.is_empty() {
        for _ in 0..cfg.ops_per_image {
            let op = cfg.strong_ops[rng.random_range(0..cfg.strong_ops.len())];
            let max = match op {
                StrongOp::Brightness => cfg.brightness_max,
                StrongOp::Contrast => cfg.contrast_max,
                StrongOp::Rotation => cfg.rotation_max_deg,
                StrongOp::Cutout => cfg.cutout_max_area,
            };
            let magnitude = match op {
                StrongOp::Cutout => rng.random::<f64>() * max,
                _ => (2.0 * rng.random::<f64>() - 1.0) * max,
            };
            out = apply_op(&out, op, magnitude, rng);
        }
    }
    out.clamp_unit();
    out
}

/// Applies one strong operation at a given magnitude. Brightness is an
/// additive shift, contrast a factor `1 + magnitude` about the mean, rotation
/// is in degrees, cutout is an area fraction. Magnitude 0 is the identity for
/// every operation.
pub fn apply_op(image: &Image, op: StrongOp, magnitude: f64, rng: &mut Rng) -> Image {
    let mut out = image.clone();
    if magnitude == 0.0 {
        return out;
    }
    match op {
        StrongOp::Brightness => out.data.iter_mut().for_each(|p| *p += magnitude),
        StrongOp::Contrast => {
            let mean = image.data.iter().sum::<f64>() / image.data.len() as f64;
            out.data
                .iter_mut()
                .for_each(|p| *p = mean + (1.0 + magnitude) * (*p - mean));
        }
        StrongOp::Rotation => rotate(image, magnitude.to_radians(), &mut out),
        StrongOp::Cutout => {
            let (h, w) = (image.height, image.width);
            let side = ((magnitude * (h * w) as f64).sqrt().round() as usize).min(h.min(w));
            let cy = rng.random_range(0..h);
            let cx = rng.random_range(0..w);
            if side > 0 {
                let y0 = cy.saturating_sub(side / 2);
                let x0 = cx.saturating_sub(side / 2);
                for r in y0..(y0 + side).min(h) {
                    for c in x0..(x0 + side).min(w) {
                        out.set(r, c, 0.0);
                    }
                }
            }
        }
    }
    out.clamp_unit();
    out
}

/// Bilinear rotation about the image center; samples outside the frame are
/// clamped to the nearest edge pixel.
fn rotate(image: &Image, angle: f64, out: &mut Image) {
    let (h, w) = (image.height, image.width);
    let (sin, cos) = angle.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let sample = |y: isize, x: isize| {
        image.get(
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        )
    };
    for r in 0..h {
        for c in 0..w {
            let (yr, xr) = (r as f64 - cy, c as f64 - cx);
            let sy = cos * yr - sin * xr + cy;
            let sx = sin * yr + cos * xr + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
            let bottom = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
            out.set(r, c, top * (1.0 - fy) + bottom * fy);
        }
    }
}

/// Weak and strong view of one source image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub weak: Image,
    pub strong: Image,
}

/// Views of a sample drawn from independent sub-streams keyed by
/// `(seed, epoch, sample id)`.
pub fn augment_pair(
    image: &Image,
    cfg: &AugConfig,
    seed: u64,
    epoch: usize,
    sample_id: &str,
) -> AugmentedPair {
    AugmentedPair {
        weak: weak_view(image, cfg, seed, epoch, sample_id),
        strong: strong_view(image, cfg, seed, epoch, sample_id),
    }
}

pub fn weak_view(image: &Image, cfg: &AugConfig, seed: u64, epoch: usize, id: &str) -> Image {
    weak_augment(
        image,
        cfg,
        &mut rng::sample_stream(seed, Stream::Weak, epoch, id),
    )
}

pub fn strong_view(image: &Image, cfg: &AugConfig, seed: u64, epoch: usize, id: &str) -> Image {
    strong_augment(
        image,
        cfg,
        &mut rng::sample_stream(seed, Stream::Strong, epoch, id),
    )
}
