use thiserror::Error;

/// Pipeline failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("incomplete results: missing {0:?}")]
    Incomplete(Vec<String>),

    #[error(transparent)]
    Core(wfdcs_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<wfdcs_core::Error> for PipelineError {
    fn from(e: wfdcs_core::Error) -> Self {
        match e {
            wfdcs_core::Error::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            wfdcs_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                PipelineError::MissingInput(io.to_string())
            }
            other => PipelineError::Core(other),
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Core(wfdcs_core::Error::from(e))
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingInput(_) => 3,
            PipelineError::Divergence(_) => 4,
            _ => 1,
        }
    }
}
