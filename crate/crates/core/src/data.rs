//! Samples with per-task annotations that may be missing, the manifest CSV
//! format, and the dataset statistics that drive class re-weighting.
//!
//! On disk a missing label is written with the challenge sentinels: `-5` for
//! valence/arousal and `-1` for expression and action units. In memory the
//! missing state is an explicit `None`, so arithmetic never sees a sentinel.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{NUM_AUS, NUM_EXPRESSIONS};

pub const VA_SENTINEL: f64 = -5.0;
pub const LABEL_SENTINEL: i32 = -1;

pub const MANIFEST_HEADER: &str =
    "image,valence,arousal,expression,au1,au2,au4,au6,au7,au10,au12,au15,au23,au24,au25,au26";
const MANIFEST_COLUMNS: usize = 4 + NUM_AUS;

/// Labels of one sample for the three tasks.
///
/// Valence and arousal are missing together and the twelve action units are
/// missing together, so each task is a single `Option`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    /// `(valence, arousal)`, each in `[-1, 1]`.
    pub va: Option<[f64; 2]>,
    /// Expression class in `0..8`; class 7 is "other" and counts as a label.
    pub expression: Option<u8>,
    /// Action-unit activations, each 0 or 1.
    pub action_units: Option<[u8; NUM_AUS]>,
}

impl AnnotationSet {
    pub fn unlabeled() -> Self {
        Self {
            va: None,
            expression: None,
            action_units: None,
        }
    }

    /// Builds annotations from sentinel-encoded raw values, enforcing the joint
    /// masking rules.
    pub fn from_raw(
        valence: f64,
        arousal: f64,
        expression: i32,
        aus: &[i32; NUM_AUS],
    ) -> std::result::Result<Self, String> {
        if !valence.is_finite() || !arousal.is_finite() {
            return Err("valence/arousal must be finite".into());
        }
        let v_missing = valence == VA_SENTINEL;
        let a_missing = arousal == VA_SENTINEL;
        let va = match (v_missing, a_missing) {
            (true, true) => None,
            (false, false) => {
                for (name, x) in [("valence", valence), ("arousal", arousal)] {
                    if !(-1.0..=1.0).contains(&x) {
                        return Err(format!("{name} {x} outside [-1, 1]"));
                    }
                }
                Some([valence, arousal])
            }
            _ => return Err("valence and arousal must be invalid together".into()),
        };

        let expression = match expression {
            LABEL_SENTINEL => None,
            e if (0..NUM_EXPRESSIONS as i32).contains(&e) => Some(e as u8),
            e => return Err(format!("expression {e} outside -1..7")),
        };

        let missing = aus.iter().filter(|&&a| a == LABEL_SENTINEL).count();
        let action_units = if missing == NUM_AUS {
            None
        } else if missing > 0 {
            return Err("action units must be invalid together".into());
        } else {
            let mut out = [0u8; NUM_AUS];
            for (o, &a) in out.iter_mut().zip(aus) {
                *o = match a {
                    0 | 1 => a as u8,
                    _ => return Err(format!("action unit value {a} outside {{-1, 0, 1}}")),
                };
            }
            Some(out)
        };

        Ok(Self {
            va,
            expression,
            action_units,
        })
    }

    pub fn validity(&self) -> TaskValidity {
        TaskValidity {
            va_valid: self.va.is_some(),
            exp_valid: self.expression.is_some(),
            au_valid: self.action_units.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image_ref: PathBuf,
    pub annotations: AnnotationSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskValidity {
    pub va_valid: bool,
    pub exp_valid: bool,
    pub au_valid: bool,
}

impl TaskValidity {
    pub fn any(&self) -> bool {
        self.va_valid || self.exp_valid || self.au_valid
    }
}

pub fn validity(sample: &Sample) -> TaskValidity {
    sample.annotations.validity()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Manifest {
                    row: i + 2,
                    msg: format!("duplicate sample id {:?}", s.id),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Parses manifest CSV text. Row numbers in errors are 1-based file lines,
/// the header being line 1.
pub fn parse_manifest(text: &str) -> Result<Dataset> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        _ => {
            return Err(Error::Manifest {
                row: 1,
                msg: format!("expected header {MANIFEST_HEADER:?}"),
            })
        }
    }

    let mut samples = Vec::new();
    for (idx, raw) in lines {
        let row = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest { row, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != MANIFEST_COLUMNS {
            return Err(err(format!(
                "expected {MANIFEST_COLUMNS} columns, found {}",
                fields.len()
            )));
        }
        let image = fields[0].trim();
        if image.is_empty() {
            return Err(err("empty image path".into()));
        }
        let real = |s: &str, name: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(format!("{name}: {s:?} is not a number")))
        };
        let int = |s: &str, name: &str| -> Result<i32> {
            s.trim()
                .parse::<i32>()
                .map_err(|_| err(format!("{name}: {s:?} is not an integer")))
        };
        let valence = real(fields[1], "valence")?;
        let arousal = real(fields[2], "arousal")?;
        let expression = int(fields[3], "expression")?;
        let mut aus = [0i32; NUM_AUS];
        for (k, a) in aus.iter_mut().enumerate() {
            *a = int(fields[4 + k], "action unit")?;
        }
        let annotations =
            AnnotationSet::from_raw(valence, arousal, expression, &aus).map_err(err)?;
        samples.push(Sample {
            id: image.to_string(),
            image_ref: PathBuf::from(image),
            annotations,
        });
    }
    Dataset::new(samples)
}

/// Writes a dataset in manifest format; `parse_manifest` inverts it exactly.
pub fn serialize_manifest(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(64 * (dataset.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for s in &dataset.samples {
        let a = &s.annotations;
        let [v, ar] = a.va.unwrap_or([VA_SENTINEL, VA_SENTINEL]);
        let e = a.expression.map_or(LABEL_SENTINEL, i32::from);
        let _ = write!(out, "{},{},{},{}", s.image_ref.display(), v, ar, e);
        match a.action_units {
            Some(aus) => aus.iter().for_each(|u| {
                let _ = write!(out, ",{u}");
            }),
            None => (0..NUM_AUS).for_each(|_| out.push_str(",-1")),
        }
        out.push('\n');
    }
    out
}

/// Label counts over a dataset, counting only valid annotations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub exp_valid: usize,
    pub exp_class_counts: [usize; NUM_EXPRESSIONS],
    pub au_positive: [usize; NUM_AUS],
    pub au_negative: [usize; NUM_AUS],
    pub invalid_va: usize,
    pub invalid_exp: usize,
    pub invalid_au: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut st = DatasetStats {
        total: dataset.len(),
        ..Default::default()
    };
    for s in &dataset.samples {
        let a = &s.annotations;
        match a.expression {
            Some(c) => {
                st.exp_valid += 1;
                st.exp_class_counts[c as usize] += 1;
            }
            None => st.invalid_exp += 1,
        }
        match a.action_units {
            Some(aus) => {
                for (k, &u) in aus.iter().enumerate() {
                    if u == 1 {
                        st.au_positive[k] += 1;
                    } else {
                        st.au_negative[k] += 1;
                    }
                }
            }
            None => st.invalid_au += 1,
        }
        if a.va.is_none() {
            st.invalid_va += 1;
        }
    }
    st
}

/// Inverse-frequency class weights `N_exp / n_exp[c]`. Classes that never
/// occur get weight 0.
pub fn expression_class_weights(stats: &DatasetStats) -> [f64; NUM_EXPRESSIONS] {
    let total = stats.exp_valid as f64;
    stats
        .exp_class_counts
        .map(|n| if n == 0 { 0.0 } else { total / n as f64 })
}

/// Positive-class weights `negatives / positives` per action unit; units
/// with no positives fall back to 1.
pub fn au_positive_weights(stats: &DatasetStats) -> [f64; NUM_AUS] {
    let mut w = [1.0; NUM_AUS];
    for (k, wk) in w.iter_mut().enumerate() {
        if stats.au_positive[k] > 0 {
            *wk = stats.au_negative[k] as f64 / stats.au_positive[k] as f64;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetWeights {
    pub expression: [f64; NUM_EXPRESSIONS],
    pub action_units: [f64; NUM_AUS],
}

impl DatasetWeights {
    pub fn from_stats(stats: &DatasetStats) -> Self {
        Self {
            expression: expression_class_weights(stats),
            action_units: au_positive_weights(stats),
        }
    }

    /// All ones: the unweighted losses.
    pub fn uniform() -> Self {
        Self {
            expression: [1.0; NUM_EXPRESSIONS],
            action_units: [1.0; NUM_AUS],
        }
    }
}
