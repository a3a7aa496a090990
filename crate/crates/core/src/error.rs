use std::path::PathBuf;

use thiserror::Error;

use crate::sim::SimTime;

/// Errors raised while configuring or driving a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    ScheduleInPast { fire_at: SimTime, now: SimTime },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed {what}: {reason}")]
    Decode { what: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        SimError::Contract(msg.into())
    }

    pub fn decode(what: &'static str, reason: impl Into<String>) -> Self {
        SimError::Decode {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
