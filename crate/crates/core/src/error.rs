use std::path::PathBuf;

use thiserror::Error;

use crate::engine::Millis;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An event was scheduled before the current clock. Always a model bug.
    #[error("event scheduled at {at} ms but the clock is already at {now} ms")]
    ScheduleInPast { at: Millis, now: Millis },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{key}`: {reason}")]
    InvalidKey { key: String, reason: String },

    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error("missing latency measurement for city pair {from} -> {to}")]
    MissingCityPair { from: String, to: String },

    #[error("missing bandwidth measurement for country {0}")]
    MissingBandwidth(String),

    #[error("country {0} has nodes but no measurement city")]
    MissingCity(String),

    #[error("node counts sum to zero")]
    ZeroNodes,

    #[error("unknown block {0}")]
    UnknownBlock(u32),

    #[error("no blocks with a defined percentile after warm-up")]
    NoEligibleBlocks,

    #[error("high-bandwidth compact relay is not modeled")]
    HighBandwidthUnsupported,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ScheduleInPast { .. } => "schedule_in_past",
            Error::Config(_) | Error::InvalidKey { .. } | Error::MissingKeys(_) => "config",
            Error::MissingCityPair { .. }
            | Error::MissingBandwidth(_)
            | Error::MissingCity(_)
            | Error::ZeroNodes => "derivation",
            Error::UnknownBlock(_) => "unknown_block",
            Error::NoEligibleBlocks => "no_eligible_blocks",
            Error::HighBandwidthUnsupported => "unsupported",
            Error::Io { .. } => "io",
            Error::Csv(_) | Error::Json(_) | Error::Parse(_) => "parse",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
