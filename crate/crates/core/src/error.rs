use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameter `{name}` = {value}: expected {expected}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("quadrature failed to reach tolerance: estimate {estimate:e}, error {error:e} after {evaluations} evaluations")]
    QuadratureFailure {
        estimate: f64,
        error: f64,
        evaluations: usize,
    },
    #[error("model breakdown: {0}")]
    ModelBreakdown(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            value,
            expected: "a finite value > 0",
        });
    }
    Ok(value)
}

pub(crate) fn check_fraction(name: &'static str, value: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidParameter {
            name,
            value,
            expected: "a value in [0, 1]",
        });
    }
    Ok(value)
}
