use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("schedule index {index} out of range [{lo}, {hi}]")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("alpha_bar must lie in (0, 1), got {0}")]
    AlphaBarOutOfRange(f64),

    #[error("non-finite query point")]
    NonFinitePoint,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid target: {0}")]
    Target(String),

    #[error("integrator produced a non-finite state at alpha_bar = {alpha_bar} (start index {t})")]
    NonFiniteFlow { t: usize, alpha_bar: f64 },

    #[error("sample size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("size {n} exceeds the assignment solver cap of {cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("invalid regressor spec: {0}")]
    Regressor(String),

    #[error("training failed at t = {t}: {source}")]
    Training {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stack file: {0}")]
    StackFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
