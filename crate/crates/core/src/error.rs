use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwistError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integrator failure at t = {t}: {reason} (last good state {state:?})")]
    Integrator {
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    #[error("not a graph over the direction line at t = {t}: {reason}")]
    NotAGraph { t: f64, reason: String },

    #[error("convexity audit failed: {0}")]
    Audit(String),

    #[error("legendre inverse did not converge for p = {p} at (t, x) = ({t}, {x})")]
    Legendre { t: f64, x: f64, p: f64 },

    #[error("twist factorization exceeded the cap of {cap} factors (worst min twist {worst_twist:e})")]
    FactorCap { cap: usize, worst_twist: f64 },

    #[error("shooting did not converge: {0}")]
    Shooting(String),

    #[error("tube escape: {0}")]
    TubeEscape(String),

    #[error("precondition unmet: {0}")]
    Precondition(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, TwistError>;
