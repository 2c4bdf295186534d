use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CodeAssignment, TokenizerConfig};
use crate::io::json_hash;
use crate::numerics::Checkpoint;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    Sid,
    Cid,
    RqVae,
}

/// A fitted code table plus the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerArtifact {
    pub kind: TokenizerKind,
    pub config: TokenizerConfig,
    pub codes: CodeAssignment,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: TokenizerKind,
    config: TokenizerConfig,
    cardinalities: Vec<usize>,
}

impl TokenizerArtifact {
    pub fn config_hash(&self) -> String {
        json_hash(&(&self.kind, &self.config)).expect("config serializes")
    }

    /// Checkpoint with metadata and the `codes` table; fitted state can be
    /// appended by the caller.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: self.kind,
            config: self.config.clone(),
            cardinalities: self.codes.cardinalities().to_vec(),
        };
        let mut c = Checkpoint::new(
            self.config_hash(),
            serde_json::to_value(meta).expect("metadata serializes"),
        );
        let data = self.codes.iter().flatten().map(|&d| u64::from(d)).collect();
        c.push_u64("codes", &[self.codes.n_items(), self.codes.m()], data);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_value(c.metadata.clone())?;
        let arr = c.array("codes")?;
        let m = meta.cardinalities.len();
        if arr.shape.len() != 2 || arr.shape[1] != m {
            return Err(Error::Checkpoint(format!(
                "code table shape {:?} does not match m = {m}",
                arr.shape
            )));
        }
        let flat = c.u64s("codes")?;
        let codes: Vec<Vec<u32>> = flat
            .chunks_exact(m)
            .map(|r| r.iter().map(|&d| d as u32).collect())
            .collect();
        Ok(Self {
            kind: meta.kind,
            config: meta.config,
            codes: CodeAssignment::new(meta.cardinalities, &codes)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
