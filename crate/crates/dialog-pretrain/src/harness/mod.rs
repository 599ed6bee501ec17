//! Configuration, experiment protocols, reporting, and the CLI surface.

pub mod cli;
pub mod config;
pub mod protocols;
pub mod report;

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Hash identifying a (configuration, dataset) pair; checkpoints record it
/// so stale caches are refused instead of silently reused.
pub fn run_hash(config: &config::ExperimentConfig, data_path: &Path) -> Result<String> {
    let bytes = std::fs::read(data_path)
        .map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(config.hash().as_bytes());
    hasher.update([0x1f]);
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Write a file via a temp-then-rename so readers never observe a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(display.clone(), e))?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(display, e))?;
    Ok(())
}
