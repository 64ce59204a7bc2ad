use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid epsilon grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite net value at j={j}")]
    NonFinite { j: i32 },
    #[error("degenerate fit: {usable} usable points, need at least 3")]
    DegenerateFit { usable: usize },
    #[error("domain error evaluating {0}")]
    Domain(String),
    #[error("derivative order {order} exceeds cap {cap}")]
    CapExceeded { order: usize, cap: usize },
    #[error("no order in [-10, 10] certifies the symbol")]
    OrderNotFound,
    #[error("cone cutoff angles must satisfy 0 < inner < outer < pi (got {inner}, {outer})")]
    BadAngles { inner: f64, outer: f64 },
    #[error("no admissible Borel radius below 2^30 for term {term}")]
    NoAdmissibleRadius { term: usize },
    #[error("symbol is not slow-scale elliptic: {0}")]
    NotElliptic(String),
    #[error("direct quantization needs {needed} multiply-adds, budget is 2^32")]
    SeparabilityFallbackTooLarge { needed: u128 },
    #[error("kernel matrix too large: {0}")]
    TooLarge(String),
    #[error("kernel lacks a smoothing certificate: {0}")]
    NoCertificate(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("flow step too large: Richardson error {error:.3e}")]
    StepTooLarge { error: f64 },
    #[error("solution unstable at t={t}: growth factor {growth:.3e}")]
    Instability { t: f64, growth: f64 },
    #[error("conormal directions present at t0={t0}: {cells:?}")]
    ConormalPresent { t0: f64, cells: Vec<usize> },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
