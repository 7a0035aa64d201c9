use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EshError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("degenerate residuals: {0}")]
    DegenerateResidual(String),
    #[error("rank-deficient design (condition estimate {0:.3e})")]
    RankDeficient(f64),
    #[error("singular B matrix (relative determinant {0:.3e})")]
    SingularB(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EshError>;
