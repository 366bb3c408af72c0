//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// Shape error attributable to a specific layer of a network graph.
    #[error("shape error in layer `{layer}`: {detail}")]
    LayerShape { layer: String, detail: String },

    /// An API contract was violated (bad argument, invalid state).
    #[error("contract error: {0}")]
    Contract(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix not positive definite: pivot {pivot} is {value}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// Triangular solve hit a zero diagonal entry.
    #[error("singular triangular matrix: zero diagonal at index {index}")]
    Singular { index: usize },

    /// Iterative solver failed to converge within its sweep cap.
    #[error("eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {offdiag:e})")]
    Convergence { sweeps: usize, offdiag: f64 },

    /// Numerical failure that survived regularization.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Optimizer rejected an update because a gradient was not finite.
    #[error("non-finite gradient for parameter `{param}` at element {index}")]
    NonFiniteGradient { param: String, index: usize },

    /// Training aborted because the loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// Malformed container file; `offset` is the byte position of the defect.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Error raised inside a named pipeline phase.
    #[error("[phase {phase}] {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline phase it occurred in.
    pub fn in_phase(self, phase: &str) -> Error {
        Error::Phase {
            phase: phase.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
