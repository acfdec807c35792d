use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum DpxError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem generation failed: {0}")]
    Generation(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("missing ground truth for instance {0}")]
    MissingGroundTruth(usize),

    #[error("certification failed for instance {index}: KKT residual {residual:e}")]
    Certification { index: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DpxError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DpxError::Dimension {
            what,
            expected,
            got,
        })
    }
}
