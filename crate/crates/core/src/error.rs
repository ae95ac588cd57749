//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix trace {trace:.12} is not 1 within tolerance {tol:.1e}")]
    NotUnitTrace { trace: f64, tol: f64 },

    #[error("state is not physical (minimum eigenvalue {min_eigenvalue:.3e})")]
    NonPhysical { min_eigenvalue: f64 },

    #[error("postselection probability {prob:.3e} is below threshold; weak value undefined")]
    ZeroPostselection { prob: f64 },

    #[error("observable is degenerate (eigenvalue gap {gap:.3e})")]
    DegenerateObservable { gap: f64 },

    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal mass {off:.3e})")]
    EigenNoConvergence { sweeps: usize, off: f64 },

    #[error("linear system is singular or near-singular (pivot {pivot:.3e})")]
    SingularSystem { pivot: f64 },

    #[error("fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("fit did not converge after {iterations} iterations")]
    FitNoConvergence { iterations: usize },

    #[error("dataset is missing condition {0}")]
    MissingCondition(String),

    #[error("need at least {need} repeats for error bars, got {got}")]
    InsufficientRepeats { need: usize, got: usize },

    #[error("table entry is undefined for {0}")]
    UndefinedEntry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
