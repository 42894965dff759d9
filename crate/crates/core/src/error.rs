use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestamps are not uniformly spaced at index {index}")]
    NonUniformTimestamps { index: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("coordinate {value} outside [0, 1]")]
    CoordinateOutOfDomain { value: f64 },
    #[error("index {index} out of range for {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },
    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },
    #[error("window too short: need {needed} steps, have {available}")]
    WindowTooShort { needed: usize, available: usize },
    #[error("sparsity k = {k} exceeds node count {n}")]
    SparsityTooLarge { k: usize, n: usize },
    #[error("no observed cells to average over")]
    EmptyLoss,
    #[error("metric domain violated: {0}")]
    MetricDomain(String),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: u64, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse { location: location.into(), message: message.to_string() }
    }
}
