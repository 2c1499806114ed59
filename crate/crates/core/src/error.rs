use std::path::PathBuf;

use thiserror::Error;

use crate::workload::RequestId;

/// Invalid configuration or profile data.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("policy selected request {0} which is not queued")]
    ContractViolation(RequestId),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("incomplete event log: request {0} was admitted but never finished or aborted")]
    IncompleteLog(RequestId),
    #[error("event log references unknown interaction/stage for request {0}")]
    UnknownRequest(RequestId),
    #[error("jain index undefined: {0}")]
    Jain(&'static str),
}

/// Top-level error for experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unknown policy `{0}` (expected one of fcfs, rpm, vtc, fs-w, fs-wi)")]
    UnknownPolicy(String),
    #[error("unknown preset `{0}` (expected one of table1, abuse, case-study)")]
    UnknownPreset(String),
    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
