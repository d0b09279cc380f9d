use std::io;

use lookalike_core::error::{EmbedError, FitError, IndexError, NameError, SearchError, StoreError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing infrastructure: {}", .0.join(", "))]
    MissingInfrastructure(Vec<String>),
    #[error("alert {0} not found")]
    AlertNotFound(String),
    #[error("alert {id} is already {status}")]
    AlertClosed { id: String, status: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("corrupt alert log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("address already in use: {0}")]
    PortInUse(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Name(#[from] NameError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

impl ServiceError {
    /// Stable machine-readable code, used in API and CLI error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "invalid_config",
            ServiceError::MissingInfrastructure(_) => "missing_infrastructure",
            ServiceError::AlertNotFound(_) => "alert_not_found",
            ServiceError::AlertClosed { .. } => "alert_closed",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::EmptyDataset => "empty_dataset",
            ServiceError::CorruptLog { .. } => "corrupt_log",
            ServiceError::PortInUse(_) => "port_in_use",
            ServiceError::Io(_) => "io_error",
            ServiceError::Name(_) => "invalid_name",
            ServiceError::Store(StoreError::InvalidValue(_)) => "invalid_request",
            ServiceError::Store(_) => "store_error",
            ServiceError::Embed(_) => "embedding_error",
            ServiceError::Index(_) => "index_error",
            ServiceError::Search(SearchError::UnknownSuspect(_)) => "unknown_package",
            ServiceError::Search(_) => "search_error",
            ServiceError::Fit(_) => "fit_error",
        }
    }
}
