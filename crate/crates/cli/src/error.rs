use esh::EshError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<EshError> for CliError {
    fn from(e: EshError) -> Self {
        let msg = e.to_string();
        match e {
            EshError::InvalidParams(_) | EshError::Config(_) => CliError::Usage(msg),
            EshError::DegenerateSample(_) | EshError::DegenerateResidual(_) | EshError::RankDeficient(_) => {
                CliError::Data(msg)
            }
            EshError::Domain(_) | EshError::SingularB(_) => CliError::Numerical(msg),
        }
    }
}
