use thiserror::Error;

/// Errors raised by the solvers and the analytic 1-D machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ellipticity violation: {0}")]
    EllipticityViolation(String),

    #[error("linear solve failed: residual {residual:e} above tolerance {tolerance:e}")]
    LinearSolveFailure { residual: f64, tolerance: f64 },

    #[error("nonlinear solve failed for m = {m} after {iterations} iterations (last update {last_update:e})")]
    NonlinearSolveFailure {
        m: u64,
        iterations: usize,
        last_update: f64,
        /// Sup-norm of the iterate at which the solve gave up.
        last_sup: f64,
    },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("construction failed: F(lo) = {f_lo:e}, F(hi) = {f_hi:e}")]
    ConstructionFailure { f_lo: f64, f_hi: f64 },

    #[error("certificate undefined: datum vanishes identically")]
    UndefinedCertificate,

    #[error("check inconclusive: {0}")]
    CheckInconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
