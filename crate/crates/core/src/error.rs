use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("point {index} lies outside the domain")]
    OutsideDomain { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("times must be strictly increasing (violated at step {index})")]
    NonMonotoneTimes { index: usize },

    #[error("non-finite result: {0}")]
    NonFinite(String),

    #[error("innovation variance is numerically singular (condition estimate {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("predicted covariance is singular at step {step}")]
    SingularPrediction { step: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("all {restarts} restarts failed: {last}")]
    FitFailed { restarts: usize, last: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn ensure_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {value}")))
    }
}
