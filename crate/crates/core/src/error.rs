use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-physical result: {0}")]
    NonPhysicalResult(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("point outside the compound domain: {0}")]
    OutOfDomain(String),

    #[error("root bracket [{lo}, {hi}] did not close within {iterations} iterations")]
    ConvergenceFailure { lo: f64, hi: f64, iterations: usize },

    #[error("no sign change of the interface residual on [{lo:e}, {hi:e}] (g = {g_lo:e}, {g_hi:e})")]
    NoRoot { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("fixed point not converged after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("newton iteration diverged (last residual {residual:e})")]
    NewtonDivergence { residual: f64 },

    #[error("degenerate hessian: largest singular value is zero")]
    DegenerateHessian,

    #[error("reduced newton system is singular")]
    SingularReducedSystem,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unit error: {0}")]
    Unit(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
