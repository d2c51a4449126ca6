use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema mismatch: expected header `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("time is not strictly increasing for vehicle {vehicle_id} (row {row})")]
    NonMonotoneTime { vehicle_id: i64, row: usize },

    #[error("need at least {needed} events, got {got}")]
    TooFewEvents { needed: usize, got: usize },

    #[error("leader profile `{event_id}` lasts {duration_s:.2} s, shorter than {min_s} s")]
    ProfileTooShort {
        event_id: String,
        duration_s: f64,
        min_s: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gap {gap_m} m is not positive: vehicles already overlap")]
    Overlap { gap_m: f64 },

    #[error("snapshot is already in collision between vehicles {0} and {1}")]
    SnapshotCollided(usize, usize),

    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    BufferUnderfull { len: usize, batch: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown event `{requested}`; available: {available}")]
    UnknownEvent { requested: String, available: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad input data rather than bad numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Schema { .. }
                | Error::MalformedRow { .. }
                | Error::NonMonotoneTime { .. }
                | Error::TooFewEvents { .. }
                | Error::ProfileTooShort { .. }
                | Error::UnknownEvent { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
                | Error::Shape(_)
        )
    }
}
