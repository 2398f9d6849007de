//! Error type shared by all solvers and verifiers.

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A user-supplied coefficient returned NaN or ±∞.
    #[error("non-finite coefficient from {what} at {at}")]
    NonFiniteCoefficient { what: &'static str, at: String },

    /// The sampled diffusion violates the uniform ellipticity bound.
    #[error("ellipticity violated: sampled min |sigma v|/|v| = {min} < required {required}")]
    EllipticityViolated { min: f64, required: f64 },

    /// A simulated path blew up.
    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    /// A grid field contains non-finite values.
    #[error("non-finite field value at s-level {level}")]
    NonFiniteField { level: usize },

    #[error("tridiagonal system is singular (pivot {pivot})")]
    TridiagonalSingular { pivot: f64 },

    /// Kernel evaluation with s >= tau.
    #[error("degenerate interval: s = {s} >= tau = {tau}")]
    DegenerateInterval { s: f64, tau: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("window [{lo}, {hi}] outside the grid range")]
    WindowOutsideGrid { lo: f64, hi: f64 },

    #[error("exponent p = {0} outside (1, 2)")]
    BadExponent(f64),

    /// The Picard map failed to contract even after shrinking the window.
    #[error("no contraction: update ratio {ratio} on window of length {window}")]
    NoContraction { ratio: f64, window: f64 },

    #[error("fixed point not reached after {iters} iterations (last update {last_update:e})")]
    MaxIterExceeded { iters: usize, last_update: f64 },

    /// Sub-diagonal Z block requested but absent (without-transpose solution).
    #[error("solution pair has no lower-triangle Z block")]
    MissingLowerTriangle,

    /// Too many paths left the truncated spatial domain.
    #[error("{excluded} of {total} paths left the truncated domain (limit {limit})")]
    PathOutsideDomain {
        excluded: usize,
        total: usize,
        limit: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
