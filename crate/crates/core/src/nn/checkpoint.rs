//! Model checkpoints: `<stem>.json` metadata plus `<stem>.params`, the
//! parameter vector as raw little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{ArchSpec, ModelState};
use super::train::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchSpec,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub n_params: usize,
    /// Free-form metrics recorded at save time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    /// Per-lead input normalization and padding settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<serde_json::Value>,
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("params") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut meta = stem.clone().into_os_string();
    meta.push(".json");
    let mut blob = stem.into_os_string();
    blob.push(".params");
    (meta.into(), blob.into())
}

pub fn save_checkpoint(state: &ModelState, meta_extra: CheckpointExtras, path: &Path) -> Result<()> {
    let (meta_path, blob_path) = paths(path);
    let meta = CheckpointMeta {
        arch: state.arch.clone(),
        seed: state.seed,
        train_config: meta_extra.train_config,
        epoch: state.epoch,
        best_val_loss: state.best_val_loss.is_finite().then_some(state.best_val_loss),
        n_params: state.params.len(),
        metrics: meta_extra.metrics,
        input: meta_extra.input,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    let blob: Vec<u8> = state.params.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointExtras {
    pub train_config: Option<TrainConfig>,
    pub metrics: Option<serde_json::Value>,
    pub input: Option<serde_json::Value>,
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, CheckpointMeta)> {
    let (meta_path, blob_path) = paths(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?;
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() != 8 * meta.n_params {
        return Err(Error::Truncated {
            expected: meta.n_params,
            found: bytes.len() / 8,
        });
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut state = ModelState::from_params(meta.arch.clone(), meta.seed, params)?;
    state.epoch = meta.epoch;
    state.best_val_loss = meta.best_val_loss.unwrap_or(f64::INFINITY);
    Ok((state, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ArchKind;

    #[test]
    fn round_trip() {
        let arch = ArchSpec::new(ArchKind::Cnn1d).with_filters(3).with_input_len(16);
        let state = ModelState::build(arch, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        save_checkpoint(&state, CheckpointExtras::default(), &stem).unwrap();
        let (loaded, meta) = load_checkpoint(&dir.path().join("m.json")).unwrap();
        assert_eq!(loaded.params, state.params);
        assert_eq!(meta.n_params, state.params.len());
        fs::write(dir.path().join("m.params"), [0u8; 12]).unwrap();
        assert!(matches!(load_checkpoint(&stem), Err(Error::Truncated { .. })));
    }
}
