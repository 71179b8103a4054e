use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("validation error at {location}: {message}")]
    Validation { location: String, message: String },

    #[error("span of {span} m is shorter than two grid steps of {dz} m")]
    InsufficientSpan { span: f64, dz: f64 },

    #[error("separation {separation} m is not a positive multiple of dz = {dz} m within the profile")]
    Alignment { separation: f64, dz: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("fit did not converge from any of {starts} starts (best residual {best_residual:e})")]
    FitNotConverged {
        starts: usize,
        best_residual: f64,
        best: Box<crate::models::FitReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}
