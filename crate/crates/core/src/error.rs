use thiserror::Error;

/// Errors raised across the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent model specification or input table.
    #[error("specification error: {0}")]
    Specification(String),

    /// Iterative fit hit its iteration cap.
    #[error("no convergence after {iterations} iterations (last deviance {last_deviance})")]
    Convergence {
        iterations: usize,
        last_deviance: f64,
        last_coefficients: Vec<f64>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("input error at line {line}: {message}")]
    Input { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn spec_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Specification(msg.into()))
}
