//! Crash-safe file replacement: write to a sibling temp file, then rename.

use std::fs;
use std::io;
use std::path::Path;

/// Runs `write` against a temporary path next to `path` and renames the
/// result over `path`. `suffix` keeps extension-sensitive writers happy.
pub(crate) fn persist_with<F>(path: &Path, suffix: &str, write: F) -> io::Result<()>
where
    F: FnOnce(&Path) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".cohortseg-")
        .suffix(suffix)
        .tempfile_in(dir)?;
    write(tmp.path())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    persist_with(path, ".tmp", |tmp| fs::write(tmp, bytes))
}
