//! Command-line front end for `mede-core`: training runs, tabular theorem
//! verification, and export of rollout paths and Q-function grids as CSV.

pub mod config;
pub mod contour;
pub mod export;
pub mod train;
pub mod verify;

pub use config::{ModeSelection, RunConfig, RunSection, VerifySection};
pub use contour::count_local_maxima;
pub use export::{export_paths, export_qgrid, LoadedAgent, QGridOptions};
pub use train::{train, TrainOutcome, METRICS_HEADER};
pub use verify::{verify, VerifyOutcome, VerifyRecord};

use mede_core::agents::AgentError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 1 usage/config, 2 numeric, 3 verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io(_) => 1,
            Self::Numeric(_) => 2,
            Self::Verification(_) => 3,
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::NonFinite { .. } => Self::Numeric(e.to_string()),
            AgentError::Io(io) => Self::Io(io),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}

/// Seventeen significant digits; `nan` for missing values.
pub fn fmt_real(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf" } else { "-inf" }.into(),
        _ => "nan".into(),
    }
}
