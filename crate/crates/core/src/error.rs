use thiserror::Error;

#[derive(Debug, Error)]
pub enum VmcError {
    /// |Ψ| vanished (or overflowed) for the evaluated configuration.
    #[error("amplitude-degenerate configuration")]
    DegenerateAmplitude,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VmcError> = std::result::Result<T, E>;
