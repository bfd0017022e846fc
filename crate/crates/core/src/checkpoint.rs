//! Model checkpoints.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {"format":"ssmtl-checkpoint","version":1,"config_hash":"<32 hex>",
//!  "best_epoch":<int|null>,"params":{"config":{...},"layers":[{"in_dim":..,
//!  "out_dim":..,"weight":[..row-major out×in..],"bias":[..]}, ...]}}
//! ```
//!
//! Floats are written in shortest round-trip form, so a saved checkpoint
//! reloads bit-identically. `config_hash` must match the hash of the embedded
//! model config; loading also checks every layer shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Params;

pub const FORMAT: &str = "ssmtl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(params: Params, best_epoch: Option<usize>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: params.config.hash(),
            best_epoch,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        ck.verify()?;
        Ok(ck)
    }

    fn verify(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let cfg = &self.params.config;
        cfg.validate()?;
        if self.config_hash != cfg.hash() {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: file says {}, config hashes to {}",
                self.config_hash,
                cfg.hash()
            )));
        }
        let expected = Params::zeros(cfg);
        if expected.layers.len() != self.params.layers.len() {
            return Err(Error::Checkpoint("wrong number of layers".into()));
        }
        for (i, (e, l)) in expected.layers.iter().zip(&self.params.layers).enumerate() {
            if (e.in_dim, e.out_dim) != (l.in_dim, l.out_dim)
                || l.weight.len() != e.weight.len()
                || l.bias.len() != e.bias.len()
            {
                return Err(Error::Checkpoint(format!("layer {i} has the wrong shape")));
            }
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, ModelConfig};

    fn sample() -> Checkpoint {
        Checkpoint::new(init_params(&ModelConfig::new(6, 6), 3).unwrap(), Some(4))
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert!(back
            .params
            .values()
            .zip(ck.params.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let mut ck = sample();
        ck.config_hash = "0".repeat(32);
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = sample();
        ck.params.layers[2].bias.pop();
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(Checkpoint::from_json("{").is_err());
    }
}
