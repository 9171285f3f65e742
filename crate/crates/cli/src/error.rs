use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("expected {expected} data, file holds {found}")]
    WrongDtype { expected: &'static str, found: &'static str },

    #[error("truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("header dims {d}x{h}x{w} are empty or overflow")]
    BadDims { d: u32, h: u32, w: u32 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),

    #[error("parameter count {found} does not match the network ({expected})")]
    ParamCount { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] asc_core::Error),

    #[error("{0} self-test suite(s) failed")]
    SelfTest(usize),
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(asc_core::Error::NonFiniteLoss(_)) | CliError::SelfTest(_) => 3,
            CliError::Core(asc_core::Error::InvalidConfig(_) | asc_core::Error::InvalidBeta(_)) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>) -> impl FnOnce(FormatError) -> CliError {
        let path = path.into();
        move |source| CliError::Format { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Csv { path, source }
    }
}
