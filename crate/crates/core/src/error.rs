use nvq_numkit::NumError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("cannot load tensor `{tensor}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("provenance mismatch: {0}")]
    Provenance(String),
}

impl CoreError {
    /// True for errors that stem from bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, CoreError::Config(_))
    }
}
