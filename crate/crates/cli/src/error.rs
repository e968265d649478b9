use std::path::PathBuf;

use prodplan_core::{CertError, GridError, HjbError, ModelError, PicardError, SimError, ValidationReport};
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// A verification check failed or an output could not be written.
    pub const FAILURE: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const CERTIFICATION: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const SIMULATION: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instance violates its standing assumptions:\n{0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("certification failed: {0}")]
    Cert(#[from] CertError),
    #[error("solver failed: {0}")]
    Solver(#[from] PicardError),
    #[error("value fields: {0}")]
    Values(#[from] HjbError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error("verification checks failed")]
    ChecksFailed,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) | CliError::Invalid(_) | CliError::Usage(_) => exit::INPUT,
            CliError::Grid(GridError::NotConverged { .. }) => exit::SOLVER,
            CliError::Grid(_) => exit::INPUT,
            CliError::Cert(_) | CliError::Solver(PicardError::Cert(_)) => exit::CERTIFICATION,
            CliError::Solver(PicardError::BadTolerance(_)) => exit::INPUT,
            CliError::Solver(_) | CliError::Values(_) => exit::SOLVER,
            CliError::Simulation(SimError::Config(_)) => exit::INPUT,
            CliError::Simulation(_) => exit::SIMULATION,
            CliError::ChecksFailed | CliError::Io { .. } => exit::FAILURE,
        }
    }
}
