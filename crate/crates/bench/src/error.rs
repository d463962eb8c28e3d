use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] hesscale::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("report error: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

macro_rules! fail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::BenchError::$kind(format!($($arg)*)))
    };
}
pub(crate) use fail;
