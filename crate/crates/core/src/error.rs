use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map or image contains non-finite values")]
    NonFiniteInput,

    #[error("invalid retention level {0}: expected a value in (0, 100]")]
    InvalidK(f64),

    #[error("invalid perturbation percentile {0}: expected a value in (0, 100)")]
    InvalidPercentile(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("pixel ({row}, {col}) lies outside a {height}x{width} grid")]
    PixelOutOfRange {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("every pixel is masked; imputation has no anchor values")]
    AllPixelsMasked,

    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("class {class_id} out of range for a model with {class_count} classes")]
    ClassOutOfRange { class_id: usize, class_count: usize },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("no map named {0:?} in the map table")]
    MissingMap(String),

    #[error("{0} groups requested; at most 16 are supported")]
    TooManyGroups(usize),

    #[error("invalid group table: {0}")]
    InvalidGroups(String),

    #[error("group tables differ between reports")]
    GroupTableMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
