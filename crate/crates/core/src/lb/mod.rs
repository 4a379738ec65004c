//! Logging and bookkeeping: the event-sourced job repository.

mod event;
mod query;
mod store;

pub use event::{derive_state, Event, EventKind, JobState, Source};
pub use query::{Field, Predicate, Query};
pub use store::{Checkpoint, JobRecord, LbStore};

#[derive(Debug, thiserror::Error)]
pub enum LbError {
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job {0} already exists")]
    JobExists(String),
    #[error("invalid job id '{0}'")]
    InvalidJobId(String),
    #[error("no saved state for job {0}")]
    NoSuchState(String),
    #[error("bad query: {0}")]
    BadQuery(String),
}

pub type Result<T> = std::result::Result<T, LbError>;
