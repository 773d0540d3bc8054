use std::path::PathBuf;

use thiserror::Error;

use crate::engine::SimTime;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, at={at}")]
    ScheduleInPast { now: SimTime, at: SimTime },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid frame layout: {0}")]
    Layout(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid workload: {0}")]
    Workload(String),

    #[error("routing bug: {0}")]
    Routing(String),

    #[error("protocol violation at {at}: {detail}")]
    ProtocolViolation { at: SimTime, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}
