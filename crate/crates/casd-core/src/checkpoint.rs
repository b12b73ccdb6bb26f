//! Checkpoints: a textual key -> tensor map with shape headers and an
//! embedded config snapshot. JSON with shortest-round-trip floats, so
//! identical models serialize to identical bytes and reload bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{CasdModel, EncoderConfig};
use crate::error::{CasdError, Result};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    encoder: EncoderConfig,
    train: TrainConfig,
    tensors: Vec<NamedTensor>,
}

pub fn save_checkpoint(path: &Path, model: &CasdModel, train: &TrainConfig) -> Result<()> {
    let file = CheckpointFile {
        encoder: model.cfg.clone(),
        train: train.clone(),
        tensors: model
            .names()
            .iter()
            .zip(model.tensors())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| CasdError::Data(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a checkpoint, validating every tensor name and shape against the
/// embedded config.
pub fn load_checkpoint(path: &Path) -> Result<(CasdModel, TrainConfig)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CasdError::Data(format!("{}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| CasdError::Data(format!("{}: {e}", path.display())))?;
    let mut model = CasdModel::zeros(&file.encoder)?;
    let entries: Result<Vec<(String, Tensor)>> = file
        .tensors
        .into_iter()
        .map(|nt| Ok((nt.name, Tensor::new(nt.shape, nt.data)?)))
        .collect();
    model.load_tensors(entries?)?;
    Ok((model, file.train))
}
