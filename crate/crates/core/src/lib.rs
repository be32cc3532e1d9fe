//! Numerical laboratory for rough differential equations with irregular drift.
//!
//! The crate builds, end to end, the pipeline
//!
//! ```text
//! Gaussian covariance -> sampled path -> signature lift -> driftless flow
//!     -> averaged drift field -> drifted solve (direct / flow transform)
//! ```
//!
//! together with the diagnostics that make the pipeline checkable at desk
//! scale: signature-algebra identities, convergence-order fits, conditional
//! non-degeneracy of the driving noise, frequency-decay of averaged fields,
//! and Malliavin-style covariance scaling.
//!
//! Modules map one-to-one onto the stages above:
//!
//! * [`tensor`]: truncated tensor algebra, group-like elements, signatures.
//! * [`gaussian`]: covariance models, exact Gaussian sampling, lifts,
//!   two-parameter variation diagnostics, 2D Young integration.
//! * [`fields`]: driving vector fields with analytic derivative tensors.
//! * [`flow`]: Davie-type step-N solver for driftless rough flows, Jacobian
//!   and inverse-Jacobian propagation, backward flows, residual-order fits.
//! * [`drift`]: drifted solvers (direct Euler and flow transform), sewing
//!   integration, nonlinear Young solves, two-drift stability gaps.
//! * [`averaging`]: averaged drift fields along a flow and the scaling
//!   experiments quantifying their regularity.
//! * [`spaces`]: periodic grid functions, dyadic frequency blocks, Besov and
//!   weighted Hoelder norms, synthetic drifts, pathwise regularity bounds.
//! * [`malliavin`]: Malliavin-style covariance matrices and smoothing-decay
//!   experiments.
//!
//! Monte Carlo and batch loops run data-parallel through [`exec`] when the
//! `parallel` feature (default) is enabled; results are bit-identical in the
//! sequential fallback because every sample derives its own RNG stream from
//! `(seed, index, purpose)`.

// Validation guards spell `!(x > 0.0)` so NaN fails closed; the de Morgan
// rewrite `x <= 0.0` would accept NaN. Index loops stay indexed because the
// numeric kernels mirror stencil arithmetic across several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod averaging;
pub mod drift;
pub mod error;
pub mod exec;
pub mod fields;
pub mod flow;
pub mod gaussian;
pub mod malliavin;
pub mod spaces;
pub mod tensor;

pub use error::{Error, Result};
