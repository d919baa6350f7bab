use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("penalty gradient vanishes on every positive pixel")]
    PenaltyGradientVanishes,
    #[error("solver diverged at iteration {iteration}: objective {objective:.6e} exceeds 10x initial {initial:.6e}")]
    Diverged {
        iteration: usize,
        objective: f64,
        initial: f64,
    },
    #[error("empty path")]
    EmptyPath,
}

pub type Result<T> = std::result::Result<T, Error>;
