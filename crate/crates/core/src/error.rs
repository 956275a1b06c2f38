use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("element {element} coincides with the probe (zero distance)")]
    ZeroDistance { element: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible geometry: {0}")]
    Infeasible(String),

    #[error("acquisition order metadata missing")]
    MissingOrder,

    #[error("calibration input is degenerate: {0}")]
    Degenerate(String),

    #[error("amplitude pattern has a zero entry at index {0}")]
    ZeroAmplitude(usize),

    #[error("frequency axes differ: {0}")]
    AxisMismatch(String),

    #[error("zero denominator at frequency indices {0:?}")]
    ZeroDenominator(Vec<usize>),

    #[error("tensor file: {0}")]
    TensorFormat(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
