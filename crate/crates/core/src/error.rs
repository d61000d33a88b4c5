use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("LVAD denominator -l_i - l_o + beta1 is zero")]
    SingularLvad,
    #[error("invalid solver settings: {0}")]
    SolverSettings(&'static str),
    #[error("non-finite state at integration step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("trajectory has {have} samples but one cycle needs {need}")]
    TooShort { have: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("{failed} of {total} simulations failed (limit {limit})")]
    TooManyFailures { failed: usize, total: usize, limit: usize },
    #[error("ill-conditioned system in {row}: condition number {cond:e}")]
    IllConditioned { row: &'static str, cond: f64 },
    #[error("inconsistent inputs: {0}")]
    Inconsistent(&'static str),
    #[error("simulation at predicted parameters {theta:?} failed: {reason}")]
    TwinSimulation { theta: [f64; 7], reason: String },
    #[error("degenerate signal: {0}")]
    Degenerate(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParams { name, reason: reason.into() }
    }
}
