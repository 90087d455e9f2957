//! The on-disk model directory: everything a later `predict` needs, saved as
//! plain files with stable bytes (no timestamps, sorted keys).

use std::path::Path;

use serde::{Deserialize, Serialize};

use screen_core::{Error, PrefixStore, Result, TinyBackend};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STORE_FILE: &str = "prefix_store.json";
pub const BACKEND_FILE: &str = "tiny_backend.json";
pub const ONTOLOGY_FILE: &str = "ontology.onto";
pub const NEGATIVES_FILE: &str = "negatives.txt";
pub const TRAIN_CONFIG_FILE: &str = "train_config.cfg";

/// The few scalars `predict` needs beyond the serialized parameters, plus
/// content hashes that tie the model to the exact inputs it was fitted on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub backend: String,
    pub disease: String,
    /// Decision threshold applied at predict time.
    pub tau: f64,
    pub corpus_sha256: String,
    pub ontology_sha256: String,
    pub config_sha256: String,
    /// Hash of the frozen backend parameters, for integrity checking.
    pub backend_params_sha256: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

pub struct SavedModel<'a> {
    pub manifest: &'a Manifest,
    pub store: &'a PrefixStore,
    pub backend: &'a TinyBackend,
    /// Exact bytes of the ontology file the model was fitted with.
    pub ontology_bytes: &'a [u8],
    pub negatives: &'a [String],
    /// Effective training configuration, rendered as `key = value` lines
    /// with the calibrated threshold baked in.
    pub train_config_text: &'a str,
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::write_io(path, e))
}

pub fn save(dir: &Path, model: &SavedModel<'_>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::write_io(dir, e))?;
    let manifest_json = serde_json::to_string_pretty(model.manifest)
        .expect("manifest serialization cannot fail") + "\n";
    write(&dir.join(MANIFEST_FILE), manifest_json)?;
    model.store.save(&dir.join(STORE_FILE))?;
    model.backend.save(&dir.join(BACKEND_FILE))?;
    write(&dir.join(ONTOLOGY_FILE), model.ontology_bytes)?;
    write(&dir.join(NEGATIVES_FILE), model.negatives.join("\n") + "\n")?;
    write(&dir.join(TRAIN_CONFIG_FILE), model.train_config_text)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::read_io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: 0,
        msg: format!("model manifest: {e}"),
    })
}
