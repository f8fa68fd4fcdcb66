use std::path::PathBuf;

use btc_core::io::IoError;
use btc_core::metrics::MetricError;
use btc_core::net::NetError;
use btc_core::pipeline::PipelineError;
use btc_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no songs found in {0}")]
    NoSongs(PathBuf),
    #[error("song {song}: missing {missing}")]
    MissingCounterpart { song: String, missing: PathBuf },
    #[error("checkpoint {0} has no normalization statistics")]
    MissingStats(PathBuf),
    #[error("training diverged before any validation")]
    Diverged,
}

impl CliError {
    /// Stable identifier printed with every failure.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io(IoError::File { .. }) | CliError::File { .. } => "E_FILE",
            CliError::Io(_) => "E_FORMAT",
            CliError::Train(TrainError::EmptySplit(_)) | CliError::NoSongs(_) => "E_DATA",
            CliError::Train(TrainError::Config(_)) | CliError::Config(_) => "E_CONFIG",
            CliError::Train(_) | CliError::Diverged => "E_TRAIN",
            CliError::Net(NetError::Config(_)) => "E_CONFIG",
            CliError::Net(_) | CliError::Pipeline(_) | CliError::MissingStats(_) => "E_MODEL",
            CliError::Metric(_) => "E_EVAL",
            CliError::MissingCounterpart { .. } => "E_MISSING",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn file_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}
