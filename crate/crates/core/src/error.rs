use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad config, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Name(#[from] crate::dataset::NameError),
    #[error(transparent)]
    Split(#[from] crate::dataset::SplitError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }
}

/// File kinds understood by the readers in [`crate::media`] and the
/// checkpoint loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Pnm,
    Flo,
    ClipMeta,
    Clip,
    Checkpoint,
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FileKind::Pnm => "pnm",
            FileKind::Flo => "flo",
            FileKind::ClipMeta => "clip.meta",
            FileKind::Clip => "clip",
            FileKind::Checkpoint => "checkpoint",
        };
        f.write_str(s)
    }
}

/// Structured rejection of a malformed file. `field` names the part of the
/// file that was wrong (`magic`, `maxval`, `payload`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} format error in {field}: {message}")]
pub struct FormatError {
    pub kind: FileKind,
    pub field: String,
    pub message: String,
}

impl FormatError {
    pub fn new(kind: FileKind, field: impl Into<String>, message: impl Into<String>) -> Self {
        FormatError {
            kind,
            field: field.into(),
            message: message.into(),
        }
    }
}
