use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{layer}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        layer: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward context does not match layer: {0}")]
    StaleContext(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("channel: {0}")]
    Channel(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("privacy violation: label payload reached server scope (client {client})")]
    LabelLeak { client: usize },

    #[error("missing trace entry for client {client}, round {round}")]
    MissingTrace { client: usize, round: usize },

    #[error("aggregation: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
