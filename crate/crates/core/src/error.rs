//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the grasp-diffusion pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error("dataset version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("no contact points: every hand point is farther than {delta} from the object")]
    NoContact { delta: f64 },

    #[error("task region `{region}` admits no oracle grasp")]
    RegionInfeasible { region: String },

    #[error("too few points: got {got}, need at least {need}")]
    TooFewPoints { got: usize, need: usize },

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("sampler diverged to a non-finite state at noise level {level}")]
    SamplerDiverged { level: usize },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 data-infeasible,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::VersionMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::MissingCheckpoint(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::NoContact { .. } | Error::RegionInfeasible { .. } | Error::TooFewPoints { .. } => 3,
            Error::NumericalFailure(_) | Error::SamplerDiverged { .. } => 4,
        }
    }
}
