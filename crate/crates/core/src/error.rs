use std::io;

use thiserror::Error;

use crate::registry::RegistryId;

#[derive(Debug, Error)]
pub enum NameError {
    #[error("unknown registry {0:?}")]
    UnknownRegistry(String),
    #[error("malformed package name {name:?}: {reason}")]
    Malformed { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("snapshot for {0} contained no valid records")]
    EmptySnapshot(RegistryId),
    #[error("no snapshot ingested for {0}")]
    NoSnapshot(RegistryId),
    #[error("corrupt store log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("invalid allow-list value {0:?}")]
    InvalidValue(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("no comparable popularity signal on both packages")]
    SignalMissing,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("{0} requested on a name without that component")]
    MissingComponent(&'static str),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("model file format mismatch: {0}")]
    FormatVersionMismatch(String),
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no items to index")]
    EmptyInput,
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("index file format mismatch: {0}")]
    FormatVersionMismatch(String),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("empty string passed to similarity")]
    EmptyString,
    #[error("no search index built for {0}")]
    IndexNotBuilt(RegistryId),
    #[error("unknown suspect package {0}")]
    UnknownSuspect(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("malformed judge output: {0}")]
    MalformedOutput(String),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("labeled data contains a single class")]
    DegenerateLabels,
    #[error("need at least {needed} labeled rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid fold count {0}")]
    InvalidFolds(usize),
}
