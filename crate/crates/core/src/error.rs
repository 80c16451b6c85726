use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point outside the system domain: {0}")]
    Domain(String),
    #[error("non-finite or ill-conditioned numerical result: {0}")]
    Numerical(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("maximum step count exceeded at t = {t}")]
    MaxStepsExceeded { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("degenerate quadratic family: |det A - 1| = {0:e}")]
    DegenerateFamily(f64),
    #[error("unsupported invariant order {0} (supported: 0, 1, 2)")]
    UnsupportedOrder(usize),
    #[error("slope undefined: {0}")]
    SlopeUndefined(String),
    #[error("no F2 variant passes adjudication")]
    NoVariantPasses,
    #[error("finite-difference noise too large: estimated error {estimate:e}")]
    PrecisionWarning { estimate: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} = {v}")))
    }
}
