use thiserror::Error;

use crate::autodiff::GraphError;
use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::gbt::GbtError;
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::synth::SynthError;
use crate::training::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error on {path}: {message}")]
    Serde { path: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn serde(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Serde {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by invalid user input rather than a failure
    /// during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Config(_) | Error::Serde { .. } | Error::Synth(SynthError::InvalidScenario(_))
        )
    }
}
