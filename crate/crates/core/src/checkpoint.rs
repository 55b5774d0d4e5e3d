//! Binary checkpoint: 8-byte magic, little-endian `u64` header length, JSON
//! header, then every parameter as little-endian `f64` in alphabetical
//! parameter order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{GgtVae, ModelConfig};
use crate::training::{RunResult, TrainConfig};

pub const MAGIC: &[u8; 8] = b"GGTVAE\x00\x01";

/// Header fields describing how the parameters were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CheckpointMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMetrics {
    pub val_auc: f64,
    pub val_ap: f64,
    pub test_auc: f64,
    pub test_ap: f64,
}

impl From<&RunResult> for CheckpointMetrics {
    fn from(r: &RunResult) -> Self {
        Self {
            val_auc: r.val_auc,
            val_ap: r.val_ap,
            test_auc: r.test_auc,
            test_ap: r.test_ap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    blob_sha256: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(model: &GgtVae, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.model != model.config || meta.feature_dim != model.feature_dim {
        return Err(Error::Config("checkpoint metadata does not describe the model".into()));
    }
    let named = model.params.named();
    let mut blob = Vec::with_capacity(8 * model.params.count());
    for (_, t) in &named {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        meta: meta.clone(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(GgtVae, CheckpointMeta)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[16..];
    if header_len > rest.len() as u64 {
        return Err(corrupt(format!("header length {header_len} exceeds file size")));
    }
    let (json, blob) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
    if hex::encode(Sha256::digest(blob)) != header.blob_sha256 {
        return Err(corrupt("parameter blob checksum mismatch"));
    }
    let meta = header.meta;
    meta.model.validate()?;
    // Values are overwritten below; the seed only fixes the structure.
    let mut model = GgtVae::new(meta.model, meta.feature_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected = model.params.count() * 8;
    if blob.len() != expected {
        return Err(corrupt(format!("parameter blob has {} bytes, expected {expected}", blob.len())));
    }
    let mut offset = 0;
    let mut entries = header.tensors.iter();
    for (name, t) in model.params.named_mut() {
        let e = entries.next().ok_or_else(|| corrupt("fewer tensors than the model needs"))?;
        if e.name != name || (e.rows, e.cols) != t.shape() {
            return Err(corrupt(format!(
                "tensor {} {}x{} does not match model parameter {name} {:?}",
                e.name,
                e.rows,
                e.cols,
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = f64::from_le_bytes(blob[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    if entries.next().is_some() {
        return Err(corrupt("more tensors than the model needs"));
    }
    if !model.params.is_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    Ok((model, meta))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save(path: &Path, model: &GgtVae, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode(model, meta)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(GgtVae, CheckpointMeta)> {
    decode(&std::fs::read(path)?)
}
