//! Data root layout shared by the CLI and the service.
//!
//! ```text
//! <root>/datasets/<id>/   dataset directories
//! <root>/models/<id>.ckpt checkpoints
//! <root>/masks/<id>.json  submitted mask files, byte for byte
//! ```

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Environment variable naming the data root.
pub const DATA_ROOT_ENV: &str = "TSXIL_DATA";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Ids are file names: ASCII letters, digits, `-`, `_` and `.`, not
/// starting with a dot.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(Error::NotFound(format!("{kind} {id:?}")))
    }
}

fn list(dir: &Path, keep: impl Fn(&Path) -> Option<String>) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    if dir.exists() {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if let Some(id) = keep(&entry.path()).filter(|id| valid_id(id)) {
                ids.push(id);
            }
        }
    }
    ids.sort();
    Ok(ids)
}

impl Store {
    /// Opens an existing root and creates the missing subdirectories.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::NotFound(format!("data root {}", root.display())));
        }
        let store = Self { root };
        for dir in [store.datasets_dir(), store.models_dir(), store.masks_dir()] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(store)
    }

    pub fn from_env() -> Result<Self> {
        let root = std::env::var_os(DATA_ROOT_ENV).ok_or_else(|| Error::Invalid(format!("{DATA_ROOT_ENV} is not set")))?;
        Self::open(PathBuf::from(root))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.root.join("masks")
    }

    pub fn dataset_dir(&self, id: &str) -> Result<PathBuf> {
        check_id("dataset", id)?;
        let dir = self.datasets_dir().join(id);
        if dir.join("header.json").is_file() {
            Ok(dir)
        } else {
            Err(Error::NotFound(format!("dataset {id:?}")))
        }
    }

    pub fn dataset_ids(&self) -> Result<Vec<String>> {
        list(&self.datasets_dir(), |p| {
            p.join("header.json").is_file().then(|| p.file_name().map(|n| n.to_string_lossy().into_owned())).flatten()
        })
    }

    pub fn load_dataset(&self, id: &str) -> Result<Dataset> {
        Dataset::load_dir(&self.dataset_dir(id)?)
    }

    pub fn save_dataset(&self, id: &str, dataset: &Dataset) -> Result<()> {
        check_id("dataset", id)?;
        dataset.save_dir(&self.datasets_dir().join(id))
    }

    fn model_path(&self, id: &str) -> Result<PathBuf> {
        check_id("model", id)?;
        Ok(self.models_dir().join(format!("{id}.ckpt")))
    }

    pub fn model_ids(&self) -> Result<Vec<String>> {
        list(&self.models_dir(), |p| {
            (p.extension().is_some_and(|e| e == "ckpt")).then(|| p.file_stem().map(|n| n.to_string_lossy().into_owned())).flatten()
        })
    }

    pub fn load_model(&self, id: &str) -> Result<Checkpoint> {
        let path = self.model_path(id)?;
        if !path.is_file() {
            return Err(Error::NotFound(format!("model {id:?}")));
        }
        Checkpoint::load(&path)
    }

    pub fn save_model(&self, id: &str, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.save(&self.model_path(id)?)
    }

    fn masks_path(&self, id: &str) -> Result<PathBuf> {
        check_id("mask file", id)?;
        Ok(self.masks_dir().join(format!("{id}.json")))
    }

    pub fn mask_ids(&self) -> Result<Vec<String>> {
        list(&self.masks_dir(), |p| {
            (p.extension().is_some_and(|e| e == "json")).then(|| p.file_stem().map(|n| n.to_string_lossy().into_owned())).flatten()
        })
    }

    pub fn load_masks(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.masks_path(id)?;
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("mask file {id:?}")),
            _ => Error::io(&path, e),
        })
    }

    pub fn save_masks(&self, id: &str, bytes: &[u8]) -> Result<()> {
        let path = self.masks_path(id)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }
}
