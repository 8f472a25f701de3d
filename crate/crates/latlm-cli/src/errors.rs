use std::path::Path;

use latlm_core::data::DataError;
use latlm_core::lattice::LatticeError;
use latlm_core::pipeline::PipelineError;

/// CLI failure, bucketed by exit code: 2 usage, 3 I/O, 4 bad data,
/// 5 model/checkpoint/numeric trouble.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Model(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Model(_) => 5,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) | CliError::Model(m) => m,
        }
    }

    /// Single-line stderr report: `error code=<n> kind=<k>: <message>`.
    pub fn one_line(&self) -> String {
        let message = self.message().replace('\n', "; ");
        format!("error code={} kind={}: {}", self.code(), self.kind(), message)
    }
}

pub fn io_error(path: &Path, err: &std::io::Error) -> CliError {
    CliError::Io(format!("{}: {err}", path.display()))
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> CliError {
        match &err {
            DataError::Io { .. } => CliError::Io(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(err: LatticeError) -> CliError {
        CliError::Model(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> CliError {
        match &err {
            PipelineError::Io { .. } => CliError::Io(err.to_string()),
            PipelineError::Data(inner) => match inner {
                DataError::Io { .. } => CliError::Io(err.to_string()),
                _ => CliError::Data(err.to_string()),
            },
            PipelineError::EmptyCorpus
            | PipelineError::EmptyValidation
            | PipelineError::EmptyEvaluation
            | PipelineError::UnknownLabel { .. }
            | PipelineError::LabelCountMismatch { .. } => CliError::Data(err.to_string()),
            PipelineError::BadTrainConfig { .. } => CliError::Usage(err.to_string()),
            _ => CliError::Model(err.to_string()),
        }
    }
}
