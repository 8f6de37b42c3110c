use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A topology failed structural validation.
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// A scenario or experiment configuration is inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation requiring at least one sample received none.
    #[error("empty dataset")]
    EmptyDataset,

    /// A SAGA step referenced a sample id that is not in the gradient table.
    #[error("sample {0} not present in gradient table")]
    SampleNotInTable(usize),

    /// An iterative routine hit its iteration cap before reaching tolerance.
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}
