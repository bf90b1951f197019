use thiserror::Error;

use crate::control::ControlResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point fell outside the region where a function is defined.
    #[error("{what}: {value} lies outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("quadrature did not reach tolerance {tolerance:e} on [{lo}, {hi}]")]
    Accuracy { tolerance: f64, lo: f64, hi: f64 },

    #[error("nonlinearity is not admissible: {0}")]
    Admissibility(String),

    /// Non-finite values or a violated explicit-step restriction.
    #[error("stability failure at step {step}: {reason}")]
    Stability { step: usize, reason: String },

    /// The nonlinear solve diverged. Carries the last finite snapshot.
    #[error("solution blew up at step {step}")]
    BlowUp { step: usize, last_finite: Vec<f64> },

    /// The transformed state left the hull of the transform table.
    #[error("hull violation at step {step}: {source}")]
    HullViolation {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("penalty schedule exhausted: best terminal error {:e} > tolerance {tolerance:e}", best.terminal_error)]
    Convergence {
        best: Box<ControlResult>,
        tolerance: f64,
    },

    #[error("conjugate gradient stagnated after {iters} iterations at penalty {kappa:e}")]
    Iteration {
        best: Box<ControlResult>,
        kappa: f64,
        iters: usize,
    },

    #[error("certification failed at stage `{stage}`: {detail}")]
    Certification { stage: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
