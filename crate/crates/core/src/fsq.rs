//! Persistent FIFO queues in a directory, one file per message.
//!
//! Layout under the queue root:
//!
//! ```text
//! SEQ                      last sequence number handed out
//! <seq>.msg                ready message (seq is 16 zero-padded digits)
//! <seq>.claimed.<owner>    message held by a consumer
//! .tmp.<random>            temporaries, removed by recover_scan
//! ```
//!
//! Every state change is a single rename, so a crash at any point leaves each
//! message either absent, ready, or claimed. Delivery is at-least-once.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::fault::{Crash, Faults};
use crate::util::random_suffix;

/// Reserved member recording delivery attempts inside a stored message.
const ATTEMPTS_KEY: &str = "_attempts";
pub const DEFAULT_STALE_AFTER: Duration = Duration::from_secs(60);
/// Temporaries younger than this may belong to a live producer.
pub const TEMP_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("queue storage error: {0}")]
    Storage(#[from] io::Error),
    #[error("item {0} is not claimed")]
    NotClaimed(u64),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("invalid owner name '{0}'")]
    BadOwner(String),
    #[error(transparent)]
    Crashed(#[from] Crash),
}

pub type Result<T> = std::result::Result<T, QueueError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueItem {
    pub seq: u64,
    pub payload: Vec<u8>,
    pub attempts: u32,
}

impl QueueItem {
    pub fn decode<T: DeserializeOwned>(&self) -> serde_json::Result<T> {
        serde_json::from_slice(&self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Ack,
    Nack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemState {
    Ready,
    Claimed(String),
}

#[derive(Debug, Clone)]
pub struct Queue {
    root: PathBuf,
    faults: Faults,
}

fn msg_name(seq: u64) -> String {
    format!("{seq:016}.msg")
}

/// Parses `<seq>.msg` or `<seq>.claimed.<owner>`.
fn parse_name(name: &str) -> Option<(u64, ItemState)> {
    let (digits, rest) = name.split_at_checked(16)?;
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let seq = digits.parse().ok()?;
    if rest == ".msg" {
        Some((seq, ItemState::Ready))
    } else {
        rest.strip_prefix(".claimed.")
            .filter(|o| !o.is_empty())
            .map(|o| (seq, ItemState::Claimed(o.to_string())))
    }
}

/// Splits stored bytes into (attempts, original payload bytes).
fn split_attempts(stored: &[u8]) -> (u32, Vec<u8>) {
    let prefix = format!("{{\"{ATTEMPTS_KEY}\":");
    let Some(rest) = stored.strip_prefix(prefix.as_bytes()) else {
        return (0, stored.to_vec());
    };
    let digits = rest.iter().take_while(|b| b.is_ascii_digit()).count();
    let attempts = std::str::from_utf8(&rest[..digits])
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut tail = &rest[digits..];
    if tail.first() == Some(&b',') {
        tail = &tail[1..];
    }
    let mut payload = b"{".to_vec();
    payload.extend_from_slice(tail);
    (attempts, payload)
}

fn join_attempts(attempts: u32, payload: &[u8]) -> Vec<u8> {
    let body = &payload[1..];
    let sep = if body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'}') {
        ""
    } else {
        ","
    };
    let mut out = format!("{{\"{ATTEMPTS_KEY}\":{attempts}{sep}").into_bytes();
    out.extend_from_slice(body);
    out
}

impl Queue {
    /// Opens a queue root, creating the directory if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Queue> {
        Queue::open_with_faults(root, Faults::none())
    }

    pub fn open_with_faults(root: impl Into<PathBuf>, faults: Faults) -> Result<Queue> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Queue { root, faults })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entries(&self) -> Result<Vec<(u64, ItemState, PathBuf)>> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root)? {
            let e = e?;
            if let Some(name) = e.file_name().to_str() {
                if let Some((seq, st)) = parse_name(name) {
                    out.push((seq, st, e.path()));
                }
            }
        }
        out.sort_by_key(|(s, _, _)| *s);
        Ok(out)
    }

    fn write_temp(&self, bytes: &[u8]) -> Result<PathBuf> {
        let tmp = self.root.join(format!(".tmp.{}", random_suffix()));
        self.faults.op("create temp")?;
        let mut f = OpenOptions::new().write(true).create_new(true).open(&tmp)?;
        f.write_all(bytes)?;
        self.faults.op("fsync temp")?;
        f.sync_all()?;
        Ok(tmp)
    }

    fn rename(&self, what: &str, from: &Path, to: &Path) -> Result<()> {
        self.faults.op(what)?;
        fs::rename(from, to)?;
        Ok(())
    }

    fn sync_root(&self) -> Result<()> {
        File::open(&self.root)?.sync_all()?;
        Ok(())
    }

    /// Appends a JSON object. Durable once this returns.
    pub fn enqueue(&self, payload: &[u8]) -> Result<u64> {
        let obj: serde_json::Value = serde_json::from_slice(payload)
            .map_err(|e| QueueError::InvalidPayload(e.to_string()))?;
        match obj.as_object() {
            None => return Err(QueueError::InvalidPayload("not a JSON object".into())),
            Some(m) if m.contains_key(ATTEMPTS_KEY) => {
                return Err(QueueError::InvalidPayload(format!(
                    "'{ATTEMPTS_KEY}' is reserved"
                )))
            }
            Some(_) => {}
        }
        let trimmed = {
            let s = payload.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(0);
            let e = payload
                .iter()
                .rposition(|b| !b.is_ascii_whitespace())
                .map(|i| i + 1)
                .unwrap_or(payload.len());
            &payload[s..e]
        };

        // producers serialize on a lock over the directory itself
        let dir_lock = File::open(&self.root)?;
        dir_lock.lock()?;

        let from_file = fs::read_to_string(self.root.join("SEQ"))
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .unwrap_or(0);
        let from_names = self.entries()?.last().map(|(s, _, _)| *s).unwrap_or(0);
        let seq = from_file.max(from_names) + 1;

        let tmp = self.write_temp(trimmed)?;
        self.rename("commit message", &tmp, &self.root.join(msg_name(seq)))?;
        let seq_tmp = self.write_temp(seq.to_string().as_bytes())?;
        self.rename("commit SEQ", &seq_tmp, &self.root.join("SEQ"))?;
        self.sync_root()?;
        Ok(seq)
    }

    pub fn enqueue_json<T: Serialize>(&self, value: &T) -> Result<u64> {
        let bytes =
            serde_json::to_vec(value).map_err(|e| QueueError::InvalidPayload(e.to_string()))?;
        self.enqueue(&bytes)
    }

    /// Takes the oldest ready message for `owner`, or `None` if there is none.
    pub fn claim(&self, owner: &str) -> Result<Option<QueueItem>> {
        if owner.is_empty()
            || !owner
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        {
            return Err(QueueError::BadOwner(owner.to_string()));
        }
        loop {
            let Some((seq, _, path)) = self
                .entries()?
                .into_iter()
                .find(|(_, st, _)| *st == ItemState::Ready)
            else {
                return Ok(None);
            };
            let claimed = self.root.join(format!("{seq:016}.claimed.{owner}"));
            // a rename keeps the mtime, which recovery reads as the claim time
            match File::options().write(true).open(&path).and_then(|f| f.set_modified(SystemTime::now())) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
            self.faults.op("claim rename")?;
            match fs::rename(&path, &claimed) {
                Ok(()) => {}
                // another consumer won the race; look again
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
            let (attempts, payload) = split_attempts(&fs::read(&claimed)?);
            let attempts = attempts + 1;
            let tmp = self.write_temp(&join_attempts(attempts, &payload))?;
            self.rename("record attempt", &tmp, &claimed)?;
            return Ok(Some(QueueItem {
                seq,
                payload,
                attempts,
            }));
        }
    }

    fn claimed_path(&self, seq: u64) -> Result<PathBuf> {
        self.entries()?
            .into_iter()
            .find(|(s, st, _)| *s == seq && matches!(st, ItemState::Claimed(_)))
            .map(|(_, _, p)| p)
            .ok_or(QueueError::NotClaimed(seq))
    }

    /// Ack removes a claimed message; Nack returns it to its FIFO slot.
    pub fn settle(&self, seq: u64, disposition: Disposition) -> Result<()> {
        let path = self.claimed_path(seq)?;
        match disposition {
            Disposition::Ack => {
                self.faults.op("ack remove")?;
                fs::remove_file(&path)?;
            }
            Disposition::Nack => {
                self.rename("nack rename", &path, &self.root.join(msg_name(seq)))?;
            }
        }
        self.sync_root()?;
        Ok(())
    }

    /// Removes orphan temporaries older than [`TEMP_GRACE`] and returns
    /// claims older than `stale_after` to the ready state. Returns how many
    /// claims were reverted.
    pub fn recover_scan(&self, stale_after: Duration) -> Result<usize> {
        let now = SystemTime::now();
        let age_of = |p: &Path| {
            fs::metadata(p)
                .and_then(|m| m.modified())
                .ok()
                .and_then(|m| now.duration_since(m).ok())
                .unwrap_or(Duration::ZERO)
        };
        for e in fs::read_dir(&self.root)? {
            let e = e?;
            if e.file_name().to_string_lossy().starts_with(".tmp.") && age_of(&e.path()) >= TEMP_GRACE {
                self.faults.op("remove temp")?;
                let _ = fs::remove_file(e.path());
            }
        }
        let mut recovered = 0;
        for (seq, st, path) in self.entries()? {
            if !matches!(st, ItemState::Claimed(_)) {
                continue;
            }
            if age_of(&path) >= stale_after {
                match self.rename("revert claim", &path, &self.root.join(msg_name(seq))) {
                    Ok(()) => recovered += 1,
                    // settled meanwhile
                    Err(QueueError::Storage(e)) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e),
                }
            }
        }
        self.sync_root()?;
        Ok(recovered)
    }

    /// Every message currently in the queue, ready or claimed, in seq order.
    pub fn scan(&self) -> Result<Vec<(QueueItem, ItemState)>> {
        let mut out = Vec::new();
        for (seq, st, path) in self.entries()? {
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            let (attempts, payload) = split_attempts(&bytes);
            out.push((
                QueueItem {
                    seq,
                    payload,
                    attempts,
                },
                st,
            ));
        }
        Ok(out)
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.entries()?.len())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queue() -> (tempfile::TempDir, Queue) {
        let dir = tempfile::tempdir().unwrap();
        let q = Queue::open(dir.path().join("q")).unwrap();
        (dir, q)
    }

    #[test]
    fn round_trip_keeps_bytes() {
        let (_d, q) = queue();
        let payload = br#"{"b":1,"a":[1,2]}"#;
        let seq = q.enqueue(payload).unwrap();
        let item = q.claim("w").unwrap().unwrap();
        assert_eq!(item.seq, seq);
        assert_eq!(item.payload, payload);
        assert_eq!(item.attempts, 1);
    }

    #[test]
    fn fifo_order() {
        let (_d, q) = queue();
        q.enqueue(br#"{"n":1}"#).unwrap();
        q.enqueue(br#"{"n":2}"#).unwrap();
        assert_eq!(q.claim("w").unwrap().unwrap().payload, br#"{"n":1}"#);
        assert_eq!(q.claim("w").unwrap().unwrap().payload, br#"{"n":2}"#);
        assert!(q.claim("w").unwrap().is_none());
    }

    #[test]
    fn layout_is_as_documented() {
        let (_d, q) = queue();
        let seq = q.enqueue(b"{}").unwrap();
        assert!(q.root().join("0000000000000001.msg").exists());
        assert_eq!(fs::read_to_string(q.root().join("SEQ")).unwrap(), "1");
        q.claim("wm").unwrap();
        assert!(q.root().join("0000000000000001.claimed.wm").exists());
        q.settle(seq, Disposition::Ack).unwrap();
        assert!(q.is_empty().unwrap());
    }

    #[test]
    fn ack_and_nack() {
        let (_d, q) = queue();
        let s1 = q.enqueue(br#"{"n":1}"#).unwrap();
        q.enqueue(br#"{"n":2}"#).unwrap();
        let it = q.claim("w").unwrap().unwrap();
        q.settle(it.seq, Disposition::Nack).unwrap();
        let again = q.claim("w").unwrap().unwrap();
        assert_eq!((again.seq, again.attempts), (s1, 2));
        assert_eq!(again.payload, br#"{"n":1}"#);
        q.settle(s1, Disposition::Ack).unwrap();
        assert_eq!(q.claim("w").unwrap().unwrap().payload, br#"{"n":2}"#);
        assert!(matches!(
            q.settle(999, Disposition::Ack),
            Err(QueueError::NotClaimed(999))
        ));
    }

    #[test]
    fn empty_object_and_non_objects() {
        let (_d, q) = queue();
        q.enqueue(b"{ }").unwrap();
        let it = q.claim("w").unwrap().unwrap();
        q.settle(it.seq, Disposition::Nack).unwrap();
        let it = q.claim("w").unwrap().unwrap();
        assert_eq!((it.payload.as_slice(), it.attempts), (&b"{ }"[..], 2));
        assert!(matches!(q.enqueue(b"[1]"), Err(QueueError::InvalidPayload(_))));
        assert!(matches!(
            q.enqueue(br#"{"_attempts":3}"#),
            Err(QueueError::InvalidPayload(_))
        ));
    }

    #[test]
    fn recover_scan_reverts_stale_claims() {
        let (_d, q) = queue();
        assert_eq!(q.recover_scan(Duration::ZERO).unwrap(), 0);
        q.enqueue(br#"{"x":1}"#).unwrap();
        q.claim("dead").unwrap().unwrap();
        assert!(q.claim("live").unwrap().is_none());
        assert_eq!(q.recover_scan(Duration::from_secs(3600)).unwrap(), 0);
        assert_eq!(q.recover_scan(Duration::ZERO).unwrap(), 1);
        let it = q.claim("live").unwrap().unwrap();
        assert_eq!(it.attempts, 2);
    }

    #[test]
    fn orphan_temp_removed_without_counting() {
        let (_d, q) = queue();
        let old = q.root().join(".tmp.deadbeef");
        let fresh = q.root().join(".tmp.cafe");
        fs::write(&old, b"{}").unwrap();
        fs::write(&fresh, b"{}").unwrap();
        File::options()
            .write(true)
            .open(&old)
            .unwrap()
            .set_modified(SystemTime::now() - TEMP_GRACE * 2)
            .unwrap();
        assert_eq!(q.recover_scan(Duration::ZERO).unwrap(), 0);
        assert!(!old.exists());
        // may still be renamed into place by a live producer
        assert!(fresh.exists());
    }

    #[test]
    fn crash_before_commit_rename_leaves_nothing_visible() {
        let (_d, q) = queue();
        let crashing = Queue::open_with_faults(q.root(), Faults::with_op_budget(2)).unwrap();
        assert!(matches!(
            crashing.enqueue(br#"{"x":1}"#),
            Err(QueueError::Crashed(_))
        ));
        q.recover_scan(Duration::ZERO).unwrap();
        assert!(q.claim("w").unwrap().is_none());
        assert!(q.scan().unwrap().is_empty());
    }

    #[test]
    fn seq_survives_consumed_items() {
        let (_d, q) = queue();
        let a = q.enqueue(b"{}").unwrap();
        let it = q.claim("w").unwrap().unwrap();
        q.settle(it.seq, Disposition::Ack).unwrap();
        let b = q.enqueue(b"{}").unwrap();
        assert!(b > a);
    }

    #[test]
    fn concurrent_claimers_never_share_an_item() {
        let (_d, q) = queue();
        for round in 0..30 {
            q.enqueue(format!("{{\"r\":{round}}}").as_bytes()).unwrap();
            let handles: Vec<_> = (0..4)
                .map(|i| {
                    let q = q.clone();
                    std::thread::spawn(move || q.claim(&format!("c{i}")).unwrap())
                })
                .collect();
            let got: Vec<_> = handles
                .into_iter()
                .filter_map(|h| h.join().unwrap())
                .collect();
            assert_eq!(got.len(), 1);
            q.settle(got[0].seq, Disposition::Ack).unwrap();
        }
    }

    #[test]
    fn concurrent_producers_get_distinct_seqs() {
        let (_d, q) = queue();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let q = q.clone();
                std::thread::spawn(move || (0..20).map(|_| q.enqueue(b"{}").unwrap()).collect::<Vec<_>>())
            })
            .collect();
        let mut all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 80);
    }
}
