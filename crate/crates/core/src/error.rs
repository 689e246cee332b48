use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by front ends to pick exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("row {row}: timestamps not strictly increasing ({message})")]
    Order { row: usize, message: String },
    #[error("row {row}: irregular sampling step ({message})")]
    Step { row: usize, message: String },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("insufficient history: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("sample [{start}, {end}] outside series of length {len}")]
    Boundary { start: i64, end: i64, len: usize },
    #[error("sample of length {0} is too short for feature extraction")]
    SampleTooShort(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("training data must contain at least two classes")]
    NeedTwoClasses,
    #[error("weibull fit failed for point {point}: {message}")]
    Fit { point: usize, message: String },
    #[error("model: {0}")]
    Model(String),
    #[error("labeling: {0}")]
    Label(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("packing: {0}")]
    Packing(String),
    #[error("cross-validation: {0}")]
    Fold(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => ErrorKind::Config,
            Error::Model(_) | Error::Fit { .. } | Error::NeedTwoClasses | Error::Fold(_) => {
                ErrorKind::Model
            }
            _ => ErrorKind::Data,
        }
    }
}
