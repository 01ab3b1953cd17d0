use crate::frameql::ParseError;
use crate::proxy::ProxyError;
use crate::synthgen::SpecError;
use crate::tracestore::OracleError;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

impl TraceError {
    pub(crate) fn schema(line: usize, message: impl Into<String>) -> Self {
        TraceError::Schema { line, message: message.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
