use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix is singular or not positive definite")]
    ModelSingular,

    #[error("degenerate score: every sample has numerically zero model density")]
    DegenerateScore,

    #[error("design matrix is rank deficient")]
    DesignSingular,

    #[error("noise scale collapsed to the floor {floor:e}")]
    ScaleDegenerate { floor: f64 },

    #[error("trimmed subset size {h} is smaller than the number of coefficients {p}")]
    InvalidTrim { h: usize, p: usize },

    #[error("invalid Hölder generator: {0}")]
    InvalidPhi(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
