//! Parameter checkpoints: JSON manifest naming tensors + raw f64 blob.
//! Load/save round trips are bit-exact.

use std::path::Path;

use super::{ModelConfig, ModelParameters};
use crate::error::{DynastyError, Result};
use crate::io;

pub const CHECKPOINT_FORMAT: &str = "dynasty-checkpoint-v1";

pub fn save_checkpoint(dir: &Path, config: &ModelConfig, params: &ModelParameters) -> Result<()> {
    let set = params.param_set();
    let borrows: Vec<(String, Vec<usize>, Vec<f64>)> =
        set.iter().map(|(n, t)| (n.clone(), t.shape().to_vec(), t.values_vec())).collect();
    let tensors: Vec<(String, Vec<usize>, &[f64])> =
        borrows.iter().map(|(n, s, v)| (n.clone(), s.clone(), v.as_slice())).collect();
    let mut extra = serde_json::Map::new();
    extra.insert("config".into(), serde_json::to_value(config)?);
    io::write_archive(dir, CHECKPOINT_FORMAT, extra, &tensors)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ModelParameters)> {
    let archive = io::read_archive(dir)?;
    if archive.format != CHECKPOINT_FORMAT {
        return Err(DynastyError::Format(format!(
            "expected {CHECKPOINT_FORMAT}, found `{}`",
            archive.format
        )));
    }
    let config_value = archive
        .extra
        .get("config")
        .ok_or_else(|| DynastyError::Format("checkpoint manifest lacks `config`".into()))?;
    let config: ModelConfig = serde_json::from_value(config_value.clone())?;
    // rebuild the parameter structure, then overwrite every value from the blob
    let params = ModelParameters::init(&config, 0)?;
    let set = params.param_set();
    if set.len() != archive.tensors.len() {
        return Err(DynastyError::Format(format!(
            "checkpoint stores {} tensors but the config implies {}",
            archive.tensors.len(),
            set.len()
        )));
    }
    for (name, tensor) in &set {
        let stored = archive.tensor(name)?;
        if stored.shape != tensor.shape() {
            return Err(DynastyError::Format(format!(
                "tensor `{name}`: checkpoint shape {:?} does not match config shape {:?}",
                stored.shape,
                tensor.shape()
            )));
        }
        tensor.update_values(|v| v.copy_from_slice(&stored.values));
    }
    Ok((config, params))
}
