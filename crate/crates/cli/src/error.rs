use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or input data (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Numerical or I/O failure while running (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<prr_gnn::Error> for CliError {
    fn from(e: prr_gnn::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<prr_gnn::DatasetError> for CliError {
    fn from(e: prr_gnn::DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}
