use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied value outside the operation's domain.
    #[error("input error: {0}")]
    Input(String),

    /// Non-finite values reached the optimizer or a loss.
    #[error("training error at step {step}: {message} (max |grad| = {max_abs_grad})")]
    Training {
        step: u64,
        max_abs_grad: f64,
        message: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed checkpoint, dataset or config file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
