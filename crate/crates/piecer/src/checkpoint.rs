//! Versioned JSON checkpoints: named parameter tensors plus configuration.
//!
//! f64 values serialize via shortest-roundtrip decimal, so a load/save cycle
//! is byte-exact and reruns of a deterministic training job produce
//! byte-identical checkpoint files.

use crate::dataset::Vocab;
use crate::model::{PiecerConfig, PiecerModel};
use crate::mrc::{MrcConfig, MrcModel};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model rebuild failed: {0}")]
    Rebuild(#[from] crate::tensor::TensorError),
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn dump_params(store: &ParamStore) -> Vec<ParamRecord> {
    store
        .iter()
        .map(|(name, t)| ParamRecord {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            values: t.values().to_vec(),
        })
        .collect()
}

fn restore_params(store: &mut ParamStore, records: &[ParamRecord]) -> Result<(), CheckpointError> {
    if records.len() != store.len() {
        return Err(CheckpointError::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            records.len(),
            store.len()
        )));
    }
    for (idx, record) in records.iter().enumerate() {
        let id = crate::params::ParamId::from_index(idx);
        if store.name(id) != record.name {
            return Err(CheckpointError::Format(format!(
                "parameter {idx} is {:?} in the checkpoint but {:?} in the model",
                record.name,
                store.name(id)
            )));
        }
        let tensor = store.get_mut(id);
        if (tensor.rows(), tensor.cols()) != (record.rows, record.cols) {
            return Err(CheckpointError::Format(format!(
                "parameter {:?} has shape {}x{} in the checkpoint but {}x{} in the model",
                record.name,
                record.rows,
                record.cols,
                tensor.rows(),
                tensor.cols()
            )));
        }
        *tensor = Tensor::matrix(record.rows, record.cols, record.values.clone())
            .map_err(|e| CheckpointError::Format(e.to_string()))?
            .with_grad();
    }
    Ok(())
}

/// A standalone PIECER module checkpoint.
#[derive(Serialize, Deserialize)]
pub struct PiecerCheckpoint {
    format_version: u32,
    kind: String,
    config: PiecerConfig,
    params: Vec<ParamRecord>,
}

pub fn save_piecer(model: &PiecerModel, store: &ParamStore) -> String {
    let cp = PiecerCheckpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "piecer-module".to_string(),
        config: model.config.clone(),
        params: dump_params(store),
    };
    serde_json::to_string_pretty(&cp).expect("checkpoint serializes")
}

/// Rebuilds the module (and a fresh store) from a checkpoint string.
pub fn load_piecer(text: &str) -> Result<(PiecerModel, ParamStore), CheckpointError> {
    let cp: PiecerCheckpoint = serde_json::from_str(text)?;
    if cp.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {}",
            cp.format_version
        )));
    }
    if cp.kind != "piecer-module" {
        return Err(CheckpointError::Format(format!("unexpected kind {:?}", cp.kind)));
    }
    let mut store = ParamStore::new();
    let model = PiecerModel::new(&mut store, "piecer", cp.config, &mut Rng::new(0))?;
    restore_params(&mut store, &cp.params)?;
    Ok((model, store))
}

/// A full MRC model checkpoint, including vocabulary and plug configs.
#[derive(Serialize, Deserialize)]
pub struct MrcCheckpoint {
    format_version: u32,
    kind: String,
    config: MrcConfig,
    vocab: Vocab,
    params: Vec<ParamRecord>,
}

pub fn save_mrc(model: &MrcModel) -> String {
    let cp = MrcCheckpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "mrc-model".to_string(),
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        params: dump_params(&model.store),
    };
    serde_json::to_string_pretty(&cp).expect("checkpoint serializes")
}

pub fn load_mrc(text: &str) -> Result<MrcModel, CheckpointError> {
    let cp: MrcCheckpoint = serde_json::from_str(text)?;
    if cp.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {}",
            cp.format_version
        )));
    }
    if cp.kind != "mrc-model" {
        return Err(CheckpointError::Format(format!("unexpected kind {:?}", cp.kind)));
    }
    let mut model = MrcModel::new(cp.config, cp.vocab.restored(), 0)?;
    restore_params(&mut model.store, &cp.params)?;
    Ok(model)
}
