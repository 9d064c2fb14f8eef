//! Shared context store: a directory of scene blobs keyed by `scene_ref`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::ClusterError;

/// Environment variable naming the shared store directory.
pub const SHARED_DIR_ENV: &str = "NIMBUS_SHARED_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextStore {
    root: PathBuf,
}

impl ContextStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ContextStore { root: root.into() }
    }

    /// The store named by `NIMBUS_SHARED_DIR`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(SHARED_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(ContextStore::new)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, scene_ref: &str) -> Result<PathBuf, ClusterError> {
        let bad = scene_ref.is_empty() || scene_ref.contains(['/', '\\']) || scene_ref == "." || scene_ref == "..";
        if bad {
            return Err(ClusterError::ContextNotFound(scene_ref.to_string()));
        }
        Ok(self.root.join(scene_ref))
    }

    pub fn put(&self, scene_ref: &str, blob: &[u8]) -> Result<(), ClusterError> {
        let path = self.path(scene_ref)?;
        fs::create_dir_all(&self.root)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, blob)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn remove(&self, scene_ref: &str) -> Result<(), ClusterError> {
        match fs::remove_file(self.path(scene_ref)?) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Loads the context blob of `scene_ref`.
    pub fn load(&self, scene_ref: &str) -> Result<Vec<u8>, ClusterError> {
        match fs::read(self.path(scene_ref)?) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(ClusterError::ContextNotFound(scene_ref.to_string())),
            Err(e) => Err(e.into()),
        }
    }
}
