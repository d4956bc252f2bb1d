use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` is a dotted path
    /// such as `constellation.num_planes`.
    #[error("invalid config at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("routing contract violated at slot {slot}: node {node} chose {next_hop}, which is not a neighbor")]
    RoutingContract { slot: u64, node: usize, next_hop: usize },

    #[error("no valid action: every entry of the mask is false")]
    NoValidAction,

    #[error("replay buffer holds {have} transitions, need {need}")]
    InsufficientBuffer { have: usize, need: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "invalid_config",
            Error::RoutingContract { .. } => "routing_contract",
            Error::NoValidAction => "no_valid_action",
            Error::InsufficientBuffer { .. } => "insufficient_buffer",
            Error::Shape(_) => "shape",
            Error::Checkpoint(_) => "checkpoint",
            Error::ConfigParse { .. } => "config_parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
