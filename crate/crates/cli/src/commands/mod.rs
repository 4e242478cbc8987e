//! Command implementations behind the CLI surface.

pub mod evaluate;
pub mod filter;
pub mod matrix;
pub mod merge;
pub mod predict;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

use horizon_core::{HorizonError, Result};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a file's bytes; used for done-markers and determinism
/// checks.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| HorizonError::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HorizonError::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HorizonError::io(path.display().to_string(), e))
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(HorizonError::Argument(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}
