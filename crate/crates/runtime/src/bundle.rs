use std::path::{Path, PathBuf};

use navworld_model::{ModelConfig, NavModel};
use navworld_numerics::checkpoint::{self, CheckpointHeader};
use navworld_numerics::ParamStore;
use navworld_sim::Episode;
use navworld_train::Variant;

use crate::{Result, RuntimeError};

/// A model with its trained parameters.
pub struct Bundle {
    pub model: NavModel,
    pub store: ParamStore<f32>,
    /// Head trained last, when recorded in the checkpoint.
    pub variant: Option<Variant>,
    pub header: CheckpointHeader,
}

/// A checkpoint file, or `last.ckpt` inside a directory.
pub fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("last.ckpt")
    } else {
        path.to_path_buf()
    }
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let path = checkpoint_path(path);
    let header = checkpoint::read_header(&path)?;
    let cfg: ModelConfig = serde_json::from_value(
        header
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| RuntimeError::Mismatch(format!("{} records no model config", path.display())))?,
    )?;
    if cfg.hash() != header.config_hash {
        return Err(RuntimeError::Mismatch(format!(
            "{}: stored config hash {} does not match its model config",
            path.display(),
            header.config_hash
        )));
    }
    let variant = header
        .meta
        .get("variant")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    let (model, mut store) = NavModel::build::<f32>(&cfg, 0)?;
    checkpoint::load(&path, &mut store)?;
    Ok(Bundle {
        model,
        store,
        variant,
        header,
    })
}

/// Rejects episodes the model cannot observe.
pub fn check_episode(model: &NavModel, ep: &Episode) -> Result<()> {
    if ep.render.resolution != model.cfg.resolution {
        return Err(RuntimeError::Mismatch(format!(
            "episode {} renders at {} px but the model expects {} px",
            ep.seed, ep.render.resolution, model.cfg.resolution
        )));
    }
    Ok(())
}
