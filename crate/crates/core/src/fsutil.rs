//! Small filesystem helpers shared by the artifact writers.

use std::path::Path;

use crate::error::{Error, Result};

/// Write a file atomically: the bytes land in a sibling temp file that is
/// renamed over the target, so concurrent runs on disjoint outputs never
/// observe half-written artifacts.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `write_file_atomic` after ensuring the parent directory exists.
pub fn write_file_atomic_mkdirs(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_file_atomic(path, bytes)
}
