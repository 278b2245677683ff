use thiserror::Error;

use crate::approx::GaussianApproximation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("optimizer did not converge in {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("negative Hessian is not positive definite at {at:?}")]
    IndefiniteCurvature { at: Vec<f64> },

    #[error("expectation propagation did not converge in {sweeps} sweeps (max change {max_change:.3e})")]
    EpNonConvergence {
        sweeps: usize,
        max_change: f64,
        last: Box<GaussianApproximation>,
    },

    #[error("step size error: {0}")]
    StepSize(String),

    #[error("model evaluation produced NaN at {at:?}")]
    Evaluation { at: Vec<f64> },

    #[error("integration domain too small: mass deficit {deficit:.3e} for {which}")]
    DomainTooSmall { which: &'static str, deficit: f64 },

    #[error("support mismatch: p > 0 where q vanishes at {at:?}")]
    SupportMismatch { at: Vec<f64> },

    #[error("unreliable Monte Carlo estimate: effective sample size {ess:.1} < 50")]
    UnreliableEstimate { ess: f64 },

    #[error("chain {chain} accepted no proposals during warmup")]
    StuckChain { chain: usize },

    #[error("baseline sampler R-hat {max_r_hat:.4} exceeds {limit}; reference draws are untrusted")]
    UntrustedBaseline { max_r_hat: f64, limit: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
