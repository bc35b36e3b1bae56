//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MwiError {
    /// Model construction or validation failed.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Acquisition geometry or frequency set rejected.
    #[error("invalid acquisition: {0}")]
    InvalidAcquisition(String),

    /// Run configuration rejected before any numerics ran.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Shapes of two coupled objects disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The factored operator is numerically singular.
    #[error("singular operator at {omega_hz:.3} Hz: pivot {pivot:.3e} below {threshold:.3e} (grid {nx}x{nz})")]
    SingularOperator {
        omega_hz: f64,
        pivot: f64,
        threshold: f64,
        nx: usize,
        nz: usize,
    },

    /// A numeric routine produced or received non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Manifest parse error with a 1-based line number.
    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl MwiError {
    /// Exit code the CLI maps this error to: 1 for configuration
    /// problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            MwiError::SingularOperator { .. } | MwiError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, MwiError>;
