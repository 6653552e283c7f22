use thiserror::Error;

use crate::equilibrium::FailureReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: axis {axis} has lo = {lo} >= hi = {hi}")]
    InvalidDomain { axis: usize, lo: f64, hi: f64 },

    #[error("invalid resolution: {0} nodes per axis (need at least 2)")]
    InvalidResolution(usize),

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error("invalid wage {0}: wages must be strictly positive and finite")]
    InvalidWage(f64),

    #[error("invalid preference exponent theta = {0}: must lie in [0, 1)")]
    InvalidPreference(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("noise level sigma = {0} must be > 0 here; use the zero-noise module for sigma = 0")]
    NonPositiveSigma(f64),

    #[error("solver did not converge: best residual {:.3e} after {} iterations", .0.best_residual_norm, .0.iterations)]
    NotConverged(Box<FailureReport>),

    #[error("refused: {0}")]
    Refused(String),

    #[error("config error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
