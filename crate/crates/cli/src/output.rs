use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::io(format!("{}: {}", path.display(), e.error)))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

/// File name without its last extension, e.g. `a.cn2.csv` → `a.cn2`.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

/// Sibling of `path` with the last extension replaced by `json`.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_partial_file_on_error() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.csv");
        let r = write_atomic(&target, |w| {
            w.write_all(b"half")?;
            Err(CliError::validation("boom"))
        });
        assert!(r.is_err());
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        write_atomic(&target, |w| Ok(w.write_all(b"ok")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&target).unwrap(), "ok");
    }

    #[test]
    fn stems_and_sidecars() {
        assert_eq!(stem(Path::new("d/a.cn2.csv")), "a.cn2");
        assert_eq!(sidecar(Path::new("d/a.cn2.csv")), Path::new("d/a.cn2.json"));
        assert_eq!(sidecar(Path::new("d/07145.txt")), Path::new("d/07145.json"));
    }
}
