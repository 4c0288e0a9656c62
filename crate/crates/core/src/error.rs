use thiserror::Error;

/// Errors raised by the quasi-periodic field library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("frequency matrix is rank deficient (smallest singular value {smallest:e}, largest {largest:e})")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("mode budget exceeded: (2K+1)^M = {requested} > {budget}")]
    BudgetExceeded { requested: u128, budget: u128 },

    #[error("frequency vector must have unit length, got |omega| = {0}")]
    NonUnitOmega(f64),

    #[error("fields do not share the same mode set")]
    MismatchedModeSet,

    #[error("mode {0:?} lies outside the truncation box")]
    ModeOutOfBox(Vec<i32>),

    #[error("invalid norm parameters: {0}")]
    InvalidNormParams(String),

    #[error("resonance detected: mode {mode:?} has |Lambda_m| = {norm:e}")]
    Resonance { mode: Vec<i32>, norm: f64 },

    #[error("input is not supported in I_infinity: mode {mode:?} carries |c| = {magnitude:e}")]
    BulletSupport { mode: Vec<i32>, magnitude: f64 },

    #[error("Jacobian determinant margin is not positive: {0:e}")]
    NonPositiveMargin(f64),

    #[error("torus grid of {points} points per dimension is too coarse for K = {radius} (need at least {required})")]
    GridTooCoarse {
        points: usize,
        radius: u32,
        required: usize,
    },

    #[error("Newton iteration did not converge at torus node {node} (residual {residual:e} after {iterations} iterations)")]
    NewtonNonConvergence {
        node: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("exponential series tail bound {bound:e} exceeds tolerance {tol:e}")]
    SeriesTail { bound: f64, tol: f64 },

    #[error("divergence tolerance breached at t = {t}: {norm:e} > {tol:e}")]
    DivergenceBreach { t: f64, norm: f64, tol: f64 },

    #[error("non-finite coefficient encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, QpError>;
