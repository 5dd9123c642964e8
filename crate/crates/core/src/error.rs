use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid item {id}: {reason}")]
    InvalidItem { id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("heterogeneous option counts: expected {expected}, item {id} has {found}")]
    HeterogeneousOptionCount { id: String, expected: usize, found: usize },

    #[error("profile for item {profile_id} does not match item {item_id}")]
    ProfileMismatch { item_id: String, profile_id: String },

    #[error("label {0} is not an option of the item")]
    UnknownLabel(Label),

    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid_item(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidItem {
            id: id.into(),
            reason: reason.into(),
        }
    }
}
