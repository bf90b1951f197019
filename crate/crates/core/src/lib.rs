//! Constructive controllability for `y_t - Δy = |∇y|² φ(y) + u χ_ω`.
//!
//! The nonlinear problem is reduced to heat-equation control through the
//! Cole–Hopf change of variables `z = φ̂(y)`, where
//! `φ̂(r) = ∫₀ʳ exp(∫₀ᵛ φ(s) ds) dv`. A heat control is synthesized with a
//! penalized adjoint/conjugate-gradient method, mapped back to a control of
//! the nonlinear equation, and the result is re-simulated and certified.
//!
//! Module map:
//! - [`nonlinearity`]: the function φ, its antiderivative Φ and the
//!   lower-bound condition `Φ ≥ α`.
//! - [`colehopf`]: tabulated evaluation of φ̂, φ̂′ and φ̂⁻¹.
//! - [`discretization`]: 1D Dirichlet grids, fields and discrete operators.
//! - [`solvers`]: θ-scheme heat stepper and the IMEX semilinear solvers.
//! - [`control`]: penalized control synthesis (distributed and initial datum).
//! - [`pipeline`]: end-to-end runs with certified inequalities.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colehopf;
pub mod control;
pub mod discretization;
mod error;
pub mod interval;
pub mod nonlinearity;
pub mod pipeline;
pub mod quadrature;
pub mod solvers;
mod tridiag;

pub use error::{Error, Result};
pub use interval::Interval;
