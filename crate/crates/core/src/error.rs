use std::io;

use thiserror::Error;

use crate::tokenizer::TokenId;

/// Problems found while decoding a serialized filter.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported hash scheme {0}")]
    UnsupportedHashScheme(u8),
    #[error("checksum mismatch or truncated bit array")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("record error at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid token id {0}")]
    InvalidToken(TokenId),
    #[error("filter format error: {0}")]
    Format(#[from] FormatError),
    #[error("every candidate token is excluded by the filter")]
    AllMasked,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
