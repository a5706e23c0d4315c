use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("frame {got} received after frame {last}; frames must be processed in increasing order")]
    OutOfOrder { last: u32, got: u32 },

    #[error("missing tensor `{0}` in weight store")]
    MissingTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
