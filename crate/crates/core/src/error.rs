use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("nearest lift of ({x1}, {x2}) is ambiguous: point lies on the cut locus")]
    AmbiguousArgmin { x1: f64, x2: f64 },

    #[error("time {t} is outside the open horizon [0, {horizon})")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("operation requires the {expected} drift model")]
    WrongVariant { expected: &'static str },

    #[error("path does not carry recorded Wiener increments")]
    MissingIncrements,

    #[error("empty batch")]
    EmptyBatch,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
