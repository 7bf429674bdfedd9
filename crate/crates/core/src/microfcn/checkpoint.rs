//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, one version byte, a little-endian `u32` header
//! length, a JSON header, then every parameter as a little-endian `f64` in
//! tensor declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{invalid, Result};
use crate::Error;

pub const MAGIC: &[u8; 8] = b"CLDSEGNN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    /// Tensor names and shapes in storage order.
    pub layout: Vec<(String, Vec<usize>)>,
}

/// Serialise `model` with its training seed and epoch.
pub fn encode(model: &Model, seed: u64, epoch: usize) -> Result<Vec<u8>> {
    let header = CheckpointHeader { config: model.config().clone(), seed, epoch, layout: model.tensor_layout() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Codec(e.to_string()))?;
    let params = model.params();
    let mut out = Vec::with_capacity(13 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    params.iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
    Ok(out)
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(Error::Parse("not a model checkpoint".into()));
    }
    if bytes[8] != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {}", bytes[8])));
    }
    let len = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(13..13 + len).ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    let mut model = Model::new(header.config.clone(), header.seed)?;
    if model.tensor_layout() != header.layout {
        return Err(invalid("checkpoint layout does not match its model configuration"));
    }
    let raw = &bytes[13 + len..];
    if raw.len() != 8 * model.param_count() {
        return Err(Error::Parse(format!("checkpoint holds {} bytes of parameters, model needs {}", raw.len(), 8 * model.param_count())));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    model.set_params(&params)?;
    Ok((model, header))
}

pub fn save(path: &Path, model: &Model, seed: u64, epoch: usize) -> Result<()> {
    std::fs::write(path, encode(model, seed, epoch)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, CheckpointHeader)> {
    decode(&std::fs::read(path)?)
}
