use std::io;

use epimem_core::error::{DecodeError, IdError, QueryError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad id: {0}")]
    Id(#[from] IdError),
    #[error("bad query: {0}")]
    Query(#[from] QueryError),
    #[error("connection closed")]
    Closed,
    #[error("could not connect to {endpoint} after {attempts} attempts: {last}")]
    ConnectFailed {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("config error: {0}")]
    Config(String),
}

impl NetError {
    /// Transport failures that a fresh connection may fix.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            NetError::Io(_) | NetError::Closed | NetError::ConnectFailed { .. }
        )
    }

    /// Short code carried in ERROR frames.
    pub fn code(&self) -> &str {
        match self {
            NetError::Io(_) => "io",
            NetError::Decode(_) => "malformed-input",
            NetError::Protocol(_) => "protocol",
            NetError::Remote { code, .. } => code,
            NetError::NotFound(_) => "not-found",
            NetError::Id(_) => "bad-id",
            NetError::Query(_) => "bad-query",
            NetError::Closed => "closed",
            NetError::ConnectFailed { .. } => "connect-failed",
            NetError::Config(_) => "config",
        }
    }
}
