use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file exists but does not follow its schema.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// Stored bytes no longer match their recorded digest.
    #[error("cache corruption in {}: {message}", path.display())]
    Corruption { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] gmmd_core::Error),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// True for missing inputs and schema violations, as opposed to failures
    /// while computing.
    pub fn is_input_error(&self) -> bool {
        match self {
            IoError::File { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            IoError::Format { .. } => true,
            IoError::Corruption { .. } => false,
            IoError::Core(e) => matches!(e, gmmd_core::Error::InvalidInput(_)),
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

/// `std::fs::read` with the path in the error.
pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| IoError::file(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| IoError::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::file(path, e))
}
