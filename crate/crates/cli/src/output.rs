//! Staged writes: results go to a hidden sibling first and are renamed into
//! place once complete, so an interrupted run never leaves a half-written
//! directory under its final name.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub(crate) struct Staged {
    tmp: PathBuf,
    target: PathBuf,
}

impl Staged {
    /// Stages `out/<rel>`, which may be a file or a directory.
    pub(crate) fn new(out: &Path, rel: &str) -> Result<Self, CliError> {
        let target = out.join(rel);
        let parent = target.parent().unwrap_or(out).to_path_buf();
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        remove(&tmp)?;
        Ok(Staged { tmp, target })
    }

    /// Staged location to write into.
    pub(crate) fn path(&self) -> &Path {
        &self.tmp
    }

    /// Staged location as a fresh directory.
    pub(crate) fn dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.tmp).map_err(|e| CliError::io(&self.tmp, e))?;
        Ok(&self.tmp)
    }

    pub(crate) fn commit(self) -> Result<PathBuf, CliError> {
        remove(&self.target)?;
        fs::rename(&self.tmp, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        let _ = remove(&self.tmp);
    }
}

fn remove(path: &Path) -> Result<(), CliError> {
    let res = match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(_) => return Ok(()),
    };
    res.map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}
