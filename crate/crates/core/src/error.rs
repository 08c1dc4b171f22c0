use thiserror::Error;

use crate::expr::ParseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("expression error: {0}")]
    Parse(#[from] ParseError),
    #[error("non-finite coefficient value at t={t}, x={x:?}")]
    NonFinite { t: f64, x: Vec<f64> },
    #[error("trajectory blew up at step {step} (t={t})")]
    BlowUp { step: usize, t: f64 },
    #[error("constants are not certified: {0}; run the condition validators first")]
    Uncertified(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
