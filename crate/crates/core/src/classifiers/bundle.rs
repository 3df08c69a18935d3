//! Model bundle: every trained model for both label dimensions in one file.
//!
//! ```text
//! "PCMODEL\0" | version: u32 LE | payload_len: u64 LE | payload (bincode) | sha256(payload)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassifierError, HyperParams, LearnerKind, Result, TrainedModel};
use crate::corpus::Dimension;
use crate::embedding::Fingerprint;

const MAGIC: &[u8; 8] = b"PCMODEL\0";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub dimension: Dimension,
    /// Checksum of the training set the models were fitted on.
    pub training_checksum: [u8; 32],
    pub n_train: usize,
    pub n_positive: usize,
    pub models: Vec<TrainedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub provider_fingerprint: Fingerprint,
    pub dim: usize,
    pub hyper: HyperParams,
    pub seed: u64,
    pub entries: Vec<BundleEntry>,
}

impl ModelBundle {
    pub fn entry(&self, dimension: Dimension) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.dimension == dimension)
    }

    pub fn model(&self, dimension: Dimension, kind: LearnerKind) -> Result<&TrainedModel> {
        self.entry(dimension)
            .and_then(|e| e.models.iter().find(|m| m.kind == kind))
            .ok_or(ClassifierError::IncompleteBundle { dimension, kind })
    }

    /// Checks that all five kinds are present for both dimensions.
    pub fn validate(&self) -> Result<()> {
        for dimension in Dimension::ALL {
            for kind in LearnerKind::ALL {
                let model = self.model(dimension, kind)?;
                if model.dim != self.dim || model.dimension != dimension {
                    return Err(ClassifierError::BundleFormat(format!(
                        "{kind} model for {dimension} is inconsistent with the bundle"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn write_bundle<W: Write>(mut writer: W, bundle: &ModelBundle) -> Result<()> {
    let payload = bincode::serialize(bundle).map_err(|e| ClassifierError::BundleFormat(e.to_string()))?;
    writer.write_all(MAGIC)?;
    writer.write_all(&BUNDLE_FORMAT_VERSION.to_le_bytes())?;
    writer.write_all(&(payload.len() as u64).to_le_bytes())?;
    writer.write_all(&payload)?;
    writer.write_all(&Sha256::digest(&payload))?;
    writer.flush()?;
    Ok(())
}

/// Reads and validates a bundle; incomplete bundles are rejected.
pub fn read_bundle<R: Read>(mut reader: R) -> Result<ModelBundle> {
    let format = |m: &str| ClassifierError::BundleFormat(m.to_owned());
    let mut head = [0u8; 20];
    reader.read_exact(&mut head).map_err(|_| format("truncated header"))?;
    if &head[..8] != MAGIC {
        return Err(format("bad magic"));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != BUNDLE_FORMAT_VERSION {
        return Err(ClassifierError::BundleFormat(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
    let mut payload = Vec::new();
    reader.by_ref().take(len).read_to_end(&mut payload)?;
    if payload.len() as u64 != len {
        return Err(format("truncated payload"));
    }
    let mut digest = [0u8; 32];
    reader.read_exact(&mut digest).map_err(|_| format("truncated checksum"))?;
    if digest[..] != Sha256::digest(&payload)[..] {
        return Err(format("checksum mismatch"));
    }
    let bundle: ModelBundle = bincode::deserialize(&payload).map_err(|e| ClassifierError::BundleFormat(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}
