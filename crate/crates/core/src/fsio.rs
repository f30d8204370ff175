//! Atomic file writes: artifacts land fully written or not at all.

use std::io::Write;
use std::path::Path;

/// Write `bytes` to `path` via a temp file in the same directory plus a
/// rename, so readers never observe a half-written artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new()?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
