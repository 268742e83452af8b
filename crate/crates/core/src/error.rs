use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid sizes, rates or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed payload exchanged between nodes.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Non-finite or otherwise unusable input data.
    #[error("input error: {0}")]
    Input(String),

    #[error("singular compensation system for pair (m={m}, k={k}): self path is zero")]
    Singular { m: usize, k: usize },

    /// A simulation produced a NaN or infinity.
    #[error("numerical abort at sample {sample}, node {node}: non-finite {quantity}")]
    NonFinite { node: usize, sample: usize, quantity: &'static str },

    /// Not enough data accumulated yet (incomplete window, short segment).
    #[error("not ready: {0}")]
    NotReady(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
