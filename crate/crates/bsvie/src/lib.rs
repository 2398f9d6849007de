//! Numerical solvers for backward stochastic Volterra integral equations
//! (BSVIEs) of the form
//!
//! ```text
//! Y(t) = ψ(t, X(t), X(T)) + ∫_t^T g(t, s, X(t), X(s), Y(s), Z(t,s)[, Z(s,t)]) ds
//!                         - ∫_t^T Z(t,s) dW(s),
//! ```
//!
//! where `X` solves a forward SDE `dX = b dt + σ dW`. The pair `(Y, Z)` is
//! recovered from the solution `Θ(t,s,ξ,x)` of a backward parabolic system
//! with a nonlocal diagonal coupling `Θ(s,s,x,x)`:
//!
//! ```text
//! Y(s)   = Θ(s, s, X(s), X(s)),
//! Z(t,s) = Θ_x(t, s, X(t), X(s)) σ(s, X(s)),        t ≤ s,
//! Z(t,s) = Γ_x(t, s, X(s)) σ(s, X(s)),              s < t   (with-transpose case),
//! ```
//!
//! with `Γ` the homogeneous backward extension of the diagonal, tied by
//! `Γ(t,t,x) = Θ(t,t,x,x)`.
//!
//! The crate provides:
//!
//! * [`model`] — problem definitions, coefficient sampling checks, and a
//!   catalog of analytic test problems;
//! * [`sde`] — Euler–Maruyama path simulation with a counter-based RNG;
//! * [`kernel`] — Gaussian fundamental-solution machinery for constant
//!   coefficients (evaluation, convolution quadrature, bound fitting);
//! * [`pde_type1`] — finite-difference and Picard/kernel solvers for the
//!   without-transpose representation system;
//! * [`pde_type2`] — the coupled `(Γ, Θ)` system solved as a fixed point;
//! * [`cascade`] — the partition cascade of per-interval fields and its
//!   convergence measurements;
//! * [`repr`] — evaluation of `(Y, Z)` along paths and residual checks of
//!   the integral equation and the martingale constraint;
//! * [`norms`] — discrete parabolic Hölder seminorms and window-scaling
//!   probes.

pub mod cascade;
pub mod coeff;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod math;
pub mod model;
pub mod norms;
pub mod pde_type1;
pub mod pde_type2;
pub mod picard;
pub mod repr;
pub mod sde;
pub mod stepper;
pub mod tridiag;

pub use error::{Error, Result};
