use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto its exit-code table.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A sampler invariant failed at runtime.
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn sampler(msg: impl Into<String>) -> Self {
        Error::Sampler(msg.into())
    }
}
