use thiserror::Error;

/// Errors produced by the estimator, its math kernels and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    /// A point sits inside the guard band around the chart antipode `-e3`.
    #[error("S2 chart breakdown: point {0:?} is within the antipode guard of -e3")]
    Antipode([f64; 3]),

    #[error("IMU samples do not cover [{start}, {end}]")]
    Coverage { start: f64, end: f64 },

    #[error("matrix is not positive semi-definite: {0}")]
    NonPsd(String),

    #[error("linear system is rank deficient ({0})")]
    RankDeficient(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("timestamp {got} precedes previous timestamp {previous}")]
    NonMonotonicTime { previous: f64, got: f64 },

    #[error("unknown variable {0}")]
    UnknownVariable(String),

    #[error("variable kind mismatch: {0}")]
    VariableKind(String),

    #[error("{file}:{line}: {message}")]
    Data {
        file: String,
        line: usize,
        message: String,
    },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
