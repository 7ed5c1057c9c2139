use thiserror::Error;

pub type Result<T, E = NumError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(
        "normal matrix is numerically singular (condition estimate {condition:.3e}); \
         retry with ridge > 0"
    )]
    Singular { condition: f64 },
    #[error("malformed matrix data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
