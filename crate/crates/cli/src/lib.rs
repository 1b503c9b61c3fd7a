//! Library side of the `nmrgrape` command-line tool.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use nmr_grape::pulse_file::PulseFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<nmr_grape::Error> for CliError {
    fn from(e: nmr_grape::Error) -> Self {
        match e {
            nmr_grape::Error::Eigen => CliError::NonConvergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub fn read_pulse_file(path: &Path) -> Result<PulseFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read pulse {}: {e}", path.display())))?;
    PulseFile::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Writes every `(path, contents)` pair to a temporary file next to its
/// destination and renames them into place only once all writes succeeded.
pub fn write_atomically(outputs: &[(PathBuf, String)]) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", p.display()));
    let mut staged = Vec::with_capacity(outputs.len());
    for (path, contents) in outputs {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(path, e))?;
        tmp.write_all(contents.as_bytes()).map_err(|e| io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| io(path, e))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| io(path, e.error))?;
    }
    Ok(())
}
