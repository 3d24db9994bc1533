//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("node {0} is isolated")]
    IsolatedNode(usize),
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("simulation diverged at frame {frame}, substep {substep}")]
    DivergedSimulation { frame: usize, substep: usize },
    #[error("empty cluster {column}")]
    EmptyCluster { column: usize },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("parse error at {path}: {message}")]
    ParseError { path: String, message: String },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad user input (as opposed to a failure
    /// while running a valid request).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidScene(_)
                | Error::InvalidConfig(_)
                | Error::IsolatedNode(_)
                | Error::ParseError { .. }
                | Error::UnsupportedVersion(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
