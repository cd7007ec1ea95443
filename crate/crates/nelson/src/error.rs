use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes: invalid
/// input is a validation failure (exit 2), `NoConvergence` is exit 3 and
/// `LemmaMargin` is exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("form factor evaluated at k = 0, which is singular")]
    SingularInput,

    #[error("basis dimension {dim} exceeds the configured cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate grid: non-vacuum diagonal entry {value:.3e} at index {index} is at or below the kernel tolerance {tol:.3e}")]
    DegenerateGrid { index: usize, value: f64, tol: f64 },

    #[error("operator string is not balanced: {0}")]
    UnbalancedString(String),

    #[error("{what} did not converge within budget (best value {value:.17e}, error estimate {err:.3e})")]
    NoConvergence { what: String, value: f64, err: f64 },

    #[error("non-finite integrand sample at {point:?}")]
    NonFiniteSample { point: Vec<[f64; 3]> },

    #[error("indefinite weight operator: diagonal entry {value:.3e} at index {index}")]
    IndefiniteWeight { index: usize, value: f64 },

    #[error("lemma margin violation: {lemma} margin {margin:.3e}")]
    LemmaMargin { lemma: String, margin: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
