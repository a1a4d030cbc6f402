use thiserror::Error;

use crate::context::SettingPair;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// One or more contexts have no post-selected pairs, so their expectations are undefined.
    #[error("starved contexts (no usable pairs): {}", fmt_contexts(.0))]
    Starved(Vec<SettingPair>),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("station {station} stream is not time-sorted at event {index}")]
    Unsorted { station: char, index: usize },

    #[error("setting choices are not uniform: {0}")]
    NonUniformSettings(String),

    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),
}

fn fmt_contexts(contexts: &[SettingPair]) -> String {
    contexts.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
