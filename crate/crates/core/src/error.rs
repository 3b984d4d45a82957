use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("checksum mismatch for {file}: manifest {expected:08x}, file {actual:08x}")]
    Checksum {
        file: String,
        expected: u32,
        actual: u32,
    },

    #[error("non-finite entry in {what} row {row}")]
    NonFinite { what: String, row: usize },

    #[error("zero-norm vector in {what}")]
    ZeroNorm { what: String },

    #[error("task group {0} is empty")]
    EmptyTaskGroup(usize),

    #[error("class {class} is listed in task {first} and task {second}")]
    ClassInTwoTasks {
        class: usize,
        first: usize,
        second: usize,
    },

    #[error("class {0} is not assigned to any task")]
    UnassignedClass(usize),

    #[error("class index {index} out of range ({count} classes)")]
    ClassOutOfRange { index: usize, count: usize },

    #[error("class {0} has no description candidates")]
    NoCandidates(usize),

    #[error("label {label} does not belong to task {task}")]
    LabelOutOfTask { label: usize, task: usize },

    #[error("task index {task} out of range ({count} tasks)")]
    TaskOutOfRange { task: usize, count: usize },

    #[error("class {0} already has a shift weight")]
    ClassAlreadyRegistered(usize),

    #[error("task {0} has not been registered")]
    TaskNotRegistered(usize),

    #[error("task {0} has no training samples")]
    EmptyTaskData(usize),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::Io {
                path: path.into(),
                source,
            }
        }
    }

    /// True for errors caused by malformed input data rather than the runtime.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
