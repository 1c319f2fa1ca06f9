//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Operand shapes do not conform for the named kernel.
    #[error("shape mismatch in `{kernel}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        kernel: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("degenerate covariance")]
    DegenerateCovariance,

    #[error("degenerate stabilized map")]
    DegenerateStabilizedMap,

    /// A layer rejected its input; `index` is the position in the stack.
    #[error("layer {index}: {message}")]
    Layer { index: usize, message: String },

    /// A point failed a manifold membership check.
    #[error("point is off the manifold: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    OffManifold { residual: f64, tolerance: f64 },

    /// A covariance matrix was not positive semi-definite after symmetrization.
    #[error("matrix is not positive semi-definite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    /// Training produced a non-finite value; reported, not panicked.
    #[error("numerical divergence at step {step}")]
    Diverged { step: usize },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn shape(kernel: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            kernel,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
