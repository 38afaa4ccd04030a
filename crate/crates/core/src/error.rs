use std::path::PathBuf;

use thiserror::Error;

use crate::data::Arm;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("arm value `{value}` outside mapping at row {row}")]
    UnknownArm { row: usize, value: String },

    #[error("negative time at row {0}")]
    NegativeTime(usize),

    #[error("invalid event indicator `{value}` at row {row} (expected 0 or 1)")]
    InvalidEvent { row: usize, value: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("arm {0} has no subjects")]
    EmptyArm(Arm),

    #[error("no events for censoring model")]
    NoCensoringEvents,

    #[error("cox fit did not converge in {iterations} iterations (gradient norm {grad_norm:.3e})")]
    CoxNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("singular information matrix")]
    SingularInformation,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(
        "proximal subproblem stopped after {iterations} iterations with gradient norm {residual:.3e}"
    )]
    SubproblemNotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical solvers, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::SubproblemNotConverged { .. }
                | Error::CoxNonConvergence { .. }
                | Error::SingularInformation
        )
    }
}
