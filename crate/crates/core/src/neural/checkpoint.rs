//! Versioned JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "modnn-checkpoint",
//!   "version": 1,
//!   "variant": "<model kind>",
//!   "meta": { ... model configuration, normalisation, window lengths ... },
//!   "params": [ { "name": "...", "shape": [rows, cols], "values": [row-major ...] } ],
//!   "checksum": "<sha256 hex over variant, meta and params>"
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save → load → save is
//! byte-identical.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::Parameterized;
use crate::error::{Error, Result};

pub const FORMAT: &str = "modnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: String,
    pub meta: serde_json::Value,
    pub params: Vec<ParamRecord>,
    pub checksum: String,
}

fn digest(variant: &str, meta: &serde_json::Value, params: &[ParamRecord]) -> String {
    let mut h = Sha256::new();
    h.update(variant.as_bytes());
    h.update(serde_json::to_vec(meta).expect("meta serializes"));
    h.update(serde_json::to_vec(params).expect("params serialise"));
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn capture<P: Parameterized + ?Sized>(
        variant: &str,
        meta: serde_json::Value,
        model: &P,
    ) -> Self {
        let params: Vec<ParamRecord> = model
            .named_params()
            .into_iter()
            .map(|(name, value)| ParamRecord {
                name,
                shape: [value.nrows(), value.ncols()],
                values: value.iter().copied().collect(),
            })
            .collect();
        let checksum = digest(variant, &meta, &params);
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            variant: variant.to_string(),
            meta,
            params,
            checksum,
        }
    }

    pub fn verify(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Integrity(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        for p in &self.params {
            if p.shape[0] * p.shape[1] != p.values.len() {
                return Err(Error::Integrity(format!(
                    "parameter `{}` declares shape {:?} but holds {} values",
                    p.name,
                    p.shape,
                    p.values.len()
                )));
            }
        }
        let expected = digest(&self.variant, &self.meta, &self.params);
        if expected != self.checksum {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        Ok(())
    }

    /// Copies every stored parameter into `model`; names and shapes must
    /// match exactly.
    pub fn restore_into<P: Parameterized + ?Sized>(&self, model: &mut P) -> Result<()> {
        let mut expected = Vec::new();
        model.visit("", &mut |name, value| expected.push((name, value.dim())));
        if expected.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        for ((name, dim), rec) in expected.iter().zip(&self.params) {
            if *name != rec.name || *dim != (rec.shape[0], rec.shape[1]) {
                return Err(Error::Integrity(format!(
                    "parameter mismatch: model has `{name}` {dim:?}, checkpoint has `{}` {:?}",
                    rec.name, rec.shape
                )));
            }
        }
        let mut records = self.params.iter();
        model.visit_mut("", &mut |_, value| {
            let rec = records.next().expect("count checked");
            *value = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.values.clone())
                .expect("shape checked");
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Integrity(format!("malformed checkpoint: {e}")))?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
