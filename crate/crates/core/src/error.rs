use thiserror::Error;

pub type Result<T> = std::result::Result<T, LdlmError>;

#[derive(Debug, Error)]
pub enum LdlmError {
    /// A configuration value or argument is outside its admissible range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The dataset is structurally inconsistent.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// A CSV row could not be interpreted. Rows are 1-based and count the header.
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// A matrix that must be positive definite was not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The smoother quadratic form has a non-positive mean or variance.
    #[error("degenerate smoother: e = {e}, psi = {psi}")]
    DegenerateSmoother { e: f64, psi: f64 },

    /// An operation was applied to a fit of the wrong design.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A special function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
