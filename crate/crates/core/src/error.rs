//! Crate-wide error type.
//!
//! One enum covers all modules: numerical experiments fail for a small set of
//! reasons (shape mismatch, domain violation, linear-algebra degeneracy,
//! divergence, non-convergent refinement) and carrying the diagnostic payload
//! in the variant keeps failure reports self-describing.

use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible dimension or truncation degree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument lies outside the documented domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or inversion failed on a degenerate matrix.
    #[error("degenerate linear algebra: {context} (witness {witness:.3e})")]
    Degenerate {
        /// What was being factorized or inverted.
        context: String,
        /// Smallest eigenvalue, determinant, or pivot that caused the failure.
        witness: f64,
    },

    /// An iteration left the trust region and was aborted.
    #[error("divergence at step {step}: state norm {norm:.3e} exceeds {limit:.3e}")]
    Divergence {
        /// Index of the first offending step.
        step: usize,
        /// Norm of the state at that step.
        norm: f64,
        /// Trust-region radius that was violated.
        limit: f64,
    },

    /// Dyadic refinement failed to settle below tolerance.
    #[error(
        "refinement did not converge: last delta {last_delta:.3e} vs tol {tol:.3e} \
         (measured additivity exponent {exponent:.3})"
    )]
    NoConvergence {
        /// Difference between the last two refinement levels.
        last_delta: f64,
        /// Requested tolerance.
        tol: f64,
        /// Fitted exponent of the germ's additivity defect.
        exponent: f64,
    },

    /// A precondition estimated from data fails, so the solver refuses to run.
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
