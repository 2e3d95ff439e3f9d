use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("grid specs differ between layers")]
    SpecMismatch,
    #[error("anxiety score {0} outside 0..=3")]
    AnxietyOutOfRange(u8),
    #[error("anxiety 0 never spawns a Gaussian")]
    ZeroAnxiety,
    #[error("invalid Gaussian parameters: {0}")]
    InvalidParams(String),
    #[error("cell value {0} is not a valid obstacle flag")]
    ObstacleValue(u8),
    #[error("malformed map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
