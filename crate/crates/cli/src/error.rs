use std::path::PathBuf;

use reqfusion_core::config::ConfigError;
use reqfusion_core::ingest::IngestError;
use reqfusion_core::metrics::MetricsError;
use reqfusion_core::pipeline::PipelineError;
use reqfusion_core::simulate::SimulationError;
use reqfusion_core::store::StoreError;
use thiserror::Error;

/// Exit status for configuration, input and storage failures.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status when every provider failed on every prompt of a document.
pub const EXIT_ALL_PROVIDERS_FAILED: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("http server: {0}")]
    Server(std::io::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(PipelineError::AllProvidersFailed { .. }) => {
                EXIT_ALL_PROVIDERS_FAILED
            }
            _ => EXIT_FAILURE,
        }
    }
}
