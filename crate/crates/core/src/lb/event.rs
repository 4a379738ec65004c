use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::util::now_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    UI,
    Gateway,
    WM,
    Broker,
    Executor,
    LogMonitor,
    JobWrapper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Registered,
    Accepted,
    Refused,
    Matched,
    Staged,
    Committed,
    Running,
    Chkpt,
    Done,
    Aborted,
    Cancelled,
    Resubmitted,
    Cleared,
    UserTag,
}

impl EventKind {
    pub const ALL: [EventKind; 14] = [
        EventKind::Registered,
        EventKind::Accepted,
        EventKind::Refused,
        EventKind::Matched,
        EventKind::Staged,
        EventKind::Committed,
        EventKind::Running,
        EventKind::Chkpt,
        EventKind::Done,
        EventKind::Aborted,
        EventKind::Cancelled,
        EventKind::Resubmitted,
        EventKind::Cleared,
        EventKind::UserTag,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Submitted,
    Waiting,
    Ready,
    Scheduled,
    Running,
    DoneOk,
    DoneFailed,
    Aborted,
    Cancelled,
    Cleared,
}

impl JobState {
    pub const ALL: [JobState; 10] = [
        JobState::Submitted,
        JobState::Waiting,
        JobState::Ready,
        JobState::Scheduled,
        JobState::Running,
        JobState::DoneOk,
        JobState::DoneFailed,
        JobState::Aborted,
        JobState::Cancelled,
        JobState::Cleared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JobState::Submitted => "SUBMITTED",
            JobState::Waiting => "WAITING",
            JobState::Ready => "READY",
            JobState::Scheduled => "SCHEDULED",
            JobState::Running => "RUNNING",
            JobState::DoneOk => "DONE_OK",
            JobState::DoneFailed => "DONE_FAILED",
            JobState::Aborted => "ABORTED",
            JobState::Cancelled => "CANCELLED",
            JobState::Cleared => "CLEARED",
        }
    }

    /// Accepts `RUNNING`, `Running`, `done_ok`, `DoneOk` and the like.
    pub fn parse(s: &str) -> Option<JobState> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_uppercase();
        JobState::ALL
            .into_iter()
            .find(|st| st.name().replace('_', "") == norm)
    }

    pub fn is_terminal(self) -> bool {
        self >= JobState::DoneOk
    }

    /// Ordering used when several events of one attempt compete. Aborted
    /// outranks the other terminal states, so within an attempt only a
    /// Cleared can follow it.
    pub(crate) fn precedence(self) -> u8 {
        match self {
            JobState::Aborted => JobState::Cancelled as u8 + 1,
            JobState::Cancelled => JobState::Aborted as u8,
            s => s as u8,
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub job: String,
    pub src: Source,
    pub sseq: u64,
    pub ts: u64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
}

impl Event {
    pub fn new(job: impl Into<String>, src: Source, sseq: u64, kind: EventKind) -> Event {
        Event {
            job: job.into(),
            src,
            sseq,
            ts: now_ms(),
            kind,
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Event {
        self.payload.insert(key.to_string(), value.to_string());
        self
    }

    pub fn attempt(self, n: u32) -> Event {
        self.with("attempt", n)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }

    /// Attempt this event was tagged with, if any.
    pub fn attempt_tag(&self) -> Option<u32> {
        self.get("attempt").and_then(|s| s.parse().ok())
    }

    /// State this event would put its attempt into, if it is state-changing.
    pub fn implied_state(&self) -> Option<JobState> {
        Some(match self.kind {
            EventKind::Registered => JobState::Submitted,
            EventKind::Accepted => JobState::Waiting,
            EventKind::Refused | EventKind::Aborted => JobState::Aborted,
            EventKind::Matched => JobState::Ready,
            EventKind::Committed => JobState::Scheduled,
            EventKind::Running => JobState::Running,
            EventKind::Done => {
                if self.get("exitCode").map(str::trim) == Some("0") {
                    JobState::DoneOk
                } else {
                    JobState::DoneFailed
                }
            }
            EventKind::Cancelled => JobState::Cancelled,
            EventKind::Cleared => JobState::Cleared,
            EventKind::Staged
            | EventKind::Chkpt
            | EventKind::UserTag
            | EventKind::Resubmitted => return None,
        })
    }
}

/// Derives `(state, attempt)` from a set of events. The result does not
/// depend on the order of `events`.
///
/// Events tagged with an `attempt` payload count only toward that attempt.
/// Untagged events count toward the latest attempt, except that each
/// Resubmitted absorbs one untagged Aborted or Refused: the failure that
/// caused it.
pub fn derive_state<'a, I>(events: I) -> (JobState, u32)
where
    I: IntoIterator<Item = &'a Event>,
{
    let events: Vec<&Event> = events.into_iter().collect();
    let resubmits = events
        .iter()
        .filter(|e| e.kind == EventKind::Resubmitted)
        .count() as u32;
    let attempt = 1 + resubmits;

    if events.iter().any(|e| e.kind == EventKind::Cleared) {
        return (JobState::Cleared, attempt);
    }

    let mut state = if attempt > 1 {
        JobState::Waiting
    } else {
        JobState::Submitted
    };
    let mut absorb = resubmits;
    let mut current: Vec<JobState> = Vec::new();
    for e in &events {
        let Some(s) = e.implied_state() else { continue };
        match e.attempt_tag() {
            Some(a) if a != attempt => {}
            Some(_) => current.push(s),
            None if s == JobState::Aborted && absorb > 0 => absorb -= 1,
            None => current.push(s),
        }
    }
    for s in current {
        if s.precedence() > state.precedence() {
            state = s;
        }
    }
    (state, attempt)
}
