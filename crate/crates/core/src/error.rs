//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the DPVI engine.
#[derive(Debug, Error)]
pub enum DpviError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Bad input data (non-finite values, invalid targets, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A contract of an operation was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Optimization blew up.
    #[error("divergence at iteration {iteration}: parameter magnitude exceeded {limit:e}")]
    Divergence { iteration: usize, limit: f64 },

    /// Noise calibration could not reach the target epsilon.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Trace analysis could not produce a result.
    #[error("analysis error: {0}")]
    Analysis(String),

    /// A metric is undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    /// Synthetic data generation failed.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DpviError>;
