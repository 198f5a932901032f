//! Whole-file writes that either fully succeed or leave the target untouched.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{IoError, IoResult};

/// Writes `path` through a temporary file in the same directory and renames
/// it into place once `fill` has returned successfully.
pub fn write_atomic<F>(path: &Path, fill: F) -> IoResult<()>
where
    F: FnOnce(&mut dyn Write) -> IoResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let tmp = NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        fill(&mut out)?;
        out.flush().map_err(|e| IoError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> IoResult<()> {
    write_atomic(path, |out| out.write_all(bytes).map_err(|e| IoError::io(path, e)))
}
