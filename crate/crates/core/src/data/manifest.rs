use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reads a manifest: one track directory per line, relative to the
/// manifest's own directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub fn write_manifest(path: &Path, tracks: &[PathBuf]) -> Result<()> {
    let mut s = String::new();
    for t in tracks {
        s.push_str(&t.to_string_lossy());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
