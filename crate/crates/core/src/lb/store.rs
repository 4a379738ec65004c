use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::event::{derive_state, Event, EventKind, JobState, Source};
use super::query::{matches, Query};
use super::{LbError, Result};
use crate::util::{complete_lines, open_locked_append};

/// A saved logical checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seq: u64,
    pub pairs: Vec<(String, String)>,
    pub attempt: u32,
    pub ts: u64,
}

/// Everything known about a job, derived from its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub owner: String,
    pub jdl: String,
    /// `job`, `dag`, `partition` or `node`.
    pub job_type: String,
    pub parent: Option<String>,
    pub state: JobState,
    pub attempt: u32,
    pub destination: Option<String>,
    pub exit_code: Option<i32>,
    pub user_tags: BTreeMap<String, String>,
    pub checkpoint_states: Vec<Checkpoint>,
    pub events: Vec<Event>,
}

impl JobRecord {
    pub fn from_events(job_id: &str, events: Vec<Event>) -> JobRecord {
        let (state, attempt) = derive_state(&events);
        let in_attempt =
            |e: &&Event| e.attempt_tag().map_or(true, |a| a == attempt);
        let reg = events.iter().find(|e| e.kind == EventKind::Registered);
        let field = |k: &str| reg.and_then(|e| e.get(k)).map(str::to_string);
        let destination = events
            .iter()
            .filter(in_attempt)
            .filter(|e| e.kind == EventKind::Matched)
            .filter_map(|e| e.get("destination"))
            .last()
            .map(str::to_string);
        let exit_code = events
            .iter()
            .filter(in_attempt)
            .filter(|e| e.kind == EventKind::Done)
            .filter_map(|e| e.get("exitCode")?.trim().parse().ok())
            .last();
        let user_tags = events
            .iter()
            .filter(|e| e.kind == EventKind::UserTag)
            .filter_map(|e| Some((e.get("name")?.to_string(), e.get("value")?.to_string())))
            .collect();
        let mut checkpoint_states: Vec<Checkpoint> = events
            .iter()
            .filter(|e| e.kind == EventKind::Chkpt)
            .filter_map(|e| {
                Some(Checkpoint {
                    seq: e.get("seq")?.parse().ok()?,
                    pairs: serde_json::from_str(e.get("pairs")?).ok()?,
                    attempt: e.attempt_tag().unwrap_or(1),
                    ts: e.ts,
                })
            })
            .collect();
        checkpoint_states.sort_by_key(|c| c.seq);
        checkpoint_states.dedup_by_key(|c| c.seq);
        JobRecord {
            job_id: job_id.to_string(),
            owner: field("owner").unwrap_or_default(),
            jdl: field("jdl").unwrap_or_default(),
            job_type: field("type").unwrap_or_else(|| "job".into()),
            parent: field("parent"),
            state,
            attempt,
            destination,
            exit_code,
            user_tags,
            checkpoint_states,
            events,
        }
    }

    /// Events tagged with `attempt` (untagged events belong to every attempt).
    pub fn events_of_attempt(&self, attempt: u32) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(move |e| e.attempt_tag().map_or(true, |a| a == attempt))
    }

    pub fn has_event(&self, kind: EventKind, attempt: u32) -> bool {
        self.events_of_attempt(attempt).any(|e| e.kind == kind)
    }

    pub fn latest_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoint_states.last()
    }
}

#[derive(Debug, Clone)]
pub struct LbStore {
    root: PathBuf,
    cache: Arc<Mutex<HashMap<String, (u64, Arc<JobRecord>)>>>,
}

fn valid_job_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'_')
}

fn parse_events(buf: &[u8]) -> Vec<Event> {
    let (lines, _) = complete_lines(buf);
    lines
        .into_iter()
        .filter(|l| !l.is_empty())
        .filter_map(|l| match serde_json::from_slice::<Event>(l) {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("skipping corrupt event line: {err}");
                None
            }
        })
        .collect()
}

impl LbStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<LbStore> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(LbStore {
            root,
            cache: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, job: &str) -> Result<PathBuf> {
        if !valid_job_id(job) {
            return Err(LbError::InvalidJobId(job.to_string()));
        }
        let shard = hex::encode(&Sha256::digest(job.as_bytes())[..1]);
        Ok(self.root.join(shard).join(format!("{job}.events")))
    }

    /// Runs `decide` on the job's current events while holding the job's
    /// lock, and appends whatever event it returns.
    fn append_locked<T>(
        &self,
        job: &str,
        create: bool,
        decide: impl FnOnce(&[Event]) -> Result<(Option<Event>, T)>,
    ) -> Result<T> {
        let path = self.path_for(job)?;
        if !create && !path.exists() {
            return Err(LbError::UnknownJob(job.to_string()));
        }
        let mut f = open_locked_append(&path)?;
        let mut buf = Vec::new();
        f.seek(SeekFrom::Start(0))?;
        f.read_to_end(&mut buf)?;
        let (_, used) = complete_lines(&buf);
        if used < buf.len() {
            // torn write from a crashed appender
            f.set_len(used as u64)?;
            buf.truncate(used);
        }
        let events = parse_events(&buf);
        if !create && events.is_empty() {
            return Err(LbError::UnknownJob(job.to_string()));
        }
        let (ev, out) = decide(&events)?;
        if let Some(ev) = ev {
            let mut line = serde_json::to_vec(&ev).map_err(std::io::Error::other)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(out)
    }

    /// Appends an event. Returns false when it was a duplicate.
    pub fn log_event(&self, e: &Event) -> Result<bool> {
        let registering = e.kind == EventKind::Registered;
        self.append_locked(&e.job, registering, |events| {
            if events.iter().any(|x| x.src == e.src && x.sseq == e.sseq) {
                return Ok((None, false));
            }
            if registering && events.iter().any(|x| x.kind == EventKind::Registered) {
                return Err(LbError::JobExists(e.job.clone()));
            }
            if !registering && !events.iter().any(|x| x.kind == EventKind::Registered) {
                return Err(LbError::UnknownJob(e.job.clone()));
            }
            Ok((Some(e.clone()), true))
        })
    }

    pub fn exists(&self, job: &str) -> bool {
        self.path_for(job).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn job(&self, job: &str) -> Result<JobRecord> {
        self.job_arc(job).map(|r| (*r).clone())
    }

    fn job_arc(&self, job: &str) -> Result<Arc<JobRecord>> {
        let path = self.path_for(job)?;
        let len = match fs::metadata(&path) {
            Ok(m) => m.len(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(LbError::UnknownJob(job.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if let Some((l, rec)) = self.cache.lock().unwrap().get(job) {
            if *l == len {
                return Ok(rec.clone());
            }
        }
        let buf = fs::read(&path)?;
        let events = parse_events(&buf);
        if !events.iter().any(|e| e.kind == EventKind::Registered) {
            return Err(LbError::UnknownJob(job.to_string()));
        }
        let rec = Arc::new(JobRecord::from_events(job, events));
        self.cache
            .lock()
            .unwrap()
            .insert(job.to_string(), (buf.len() as u64, rec.clone()));
        Ok(rec)
    }

    pub fn state(&self, job: &str) -> Result<(JobState, u32)> {
        self.job_arc(job).map(|r| (r.state, r.attempt))
    }

    /// All job ids, ascending.
    pub fn job_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(shard.path())? {
                let name = f?.file_name();
                if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".events")) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn records(&self) -> Result<Vec<JobRecord>> {
        let mut out = Vec::new();
        for id in self.job_ids()? {
            match self.job(&id) {
                Ok(r) => out.push(r),
                Err(LbError::UnknownJob(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Job ids satisfying every predicate, ascending.
    pub fn query(&self, q: &Query) -> Result<Vec<String>> {
        let compiled = q.compile()?;
        let mut out = Vec::new();
        for id in self.job_ids()? {
            match self.job_arc(&id) {
                Ok(r) if matches(&compiled, &r) => out.push(id),
                Ok(_) | Err(LbError::UnknownJob(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Drops every derived record; the next read rebuilds from event files.
    pub fn clear_cache(&self) {
        self.cache.lock().unwrap().clear();
    }

    /// Saves a checkpoint state and returns its sequence number.
    pub fn save_state(&self, job: &str, pairs: &[(String, String)], attempt: Option<u32>) -> Result<u64> {
        let pairs_json = serde_json::to_string(pairs).map_err(std::io::Error::other)?;
        self.append_locked(job, false, |events| {
            let rec = JobRecord::from_events(job, events.to_vec());
            if rec.state == JobState::Cleared {
                return Err(LbError::UnknownJob(job.to_string()));
            }
            let seq = rec.checkpoint_states.last().map_or(0, |c| c.seq) + 1;
            let ev = Event::new(job, Source::JobWrapper, seq, EventKind::Chkpt)
                .with("seq", seq)
                .with("pairs", &pairs_json)
                .attempt(attempt.unwrap_or(rec.attempt));
            Ok((Some(ev), seq))
        })
    }

    /// The state with sequence `seq`, or the latest one.
    pub fn get_state(&self, job: &str, seq: Option<u64>) -> Result<Checkpoint> {
        let rec = self.job_arc(job)?;
        let found = match seq {
            Some(s) => rec.checkpoint_states.iter().find(|c| c.seq == s),
            None => rec.checkpoint_states.last(),
        };
        found
            .cloned()
            .ok_or_else(|| LbError::NoSuchState(job.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, LbStore) {
        let d = tempfile::tempdir().unwrap();
        let s = LbStore::open(d.path().join("lbstore")).unwrap();
        (d, s)
    }

    fn register(s: &LbStore, job: &str, owner: &str) {
        s.log_event(
            &Event::new(job, Source::Gateway, 1, EventKind::Registered)
                .with("owner", owner)
                .with("jdl", "[ Executable = \"/bin/true\"; ]"),
        )
        .unwrap();
    }

    #[test]
    fn registered_job_is_submitted() {
        let (_d, s) = store();
        register(&s, "j1", "alice");
        let r = s.job("j1").unwrap();
        assert_eq!((r.state, r.attempt, r.owner.as_str()), (JobState::Submitted, 1, "alice"));
    }

    #[test]
    fn duplicates_are_ignored() {
        let (_d, s) = store();
        register(&s, "j1", "a");
        let e = Event::new("j1", Source::WM, 1, EventKind::Accepted);
        assert!(s.log_event(&e).unwrap());
        assert!(!s.log_event(&e).unwrap());
        assert_eq!(s.job("j1").unwrap().events.len(), 2);
    }

    #[test]
    fn unknown_job_rejected() {
        let (_d, s) = store();
        let e = Event::new("nope", Source::WM, 1, EventKind::Accepted);
        assert!(matches!(s.log_event(&e), Err(LbError::UnknownJob(_))));
        assert!(matches!(s.job("nope"), Err(LbError::UnknownJob(_))));
        assert!(matches!(
            s.log_event(&Event::new("../x", Source::WM, 1, EventKind::Registered)),
            Err(LbError::InvalidJobId(_))
        ));
    }

    #[test]
    fn second_registration_conflicts() {
        let (_d, s) = store();
        register(&s, "j1", "a");
        let again = Event::new("j1", Source::Gateway, 7, EventKind::Registered);
        assert!(matches!(s.log_event(&again), Err(LbError::JobExists(_))));
    }

    #[test]
    fn checkpoints() {
        let (_d, s) = store();
        register(&s, "j1", "a");
        assert!(matches!(s.get_state("j1", None), Err(LbError::NoSuchState(_))));
        let p1 = vec![("step".to_string(), "3".to_string())];
        let p2 = vec![("step".to_string(), "4".to_string())];
        assert_eq!(s.save_state("j1", &p1, None).unwrap(), 1);
        assert_eq!(s.save_state("j1", &p2, None).unwrap(), 2);
        assert_eq!(s.get_state("j1", None).unwrap().pairs, p2);
        assert_eq!(s.get_state("j1", Some(1)).unwrap().pairs, p1);
        assert_eq!(s.job("j1").unwrap().state, JobState::Submitted);
        s.log_event(&Event::new("j1", Source::WM, 9, EventKind::Cleared)).unwrap();
        assert!(matches!(s.save_state("j1", &p1, None), Err(LbError::UnknownJob(_))));
    }

    #[test]
    fn owner_state_and_tag_query() {
        let (_d, s) = store();
        let setup = [
            ("j1", "xyz", "X", true),
            ("j2", "xyz", "Y", true),
            ("j3", "xyz", "Z", true),
            ("j4", "abc", "X", true),
            ("j5", "xyz", "X", false),
        ];
        for (job, prod, dest, running) in setup {
            register(&s, job, "u");
            s.log_event(
                &Event::new(job, Source::Gateway, 10, EventKind::UserTag)
                    .with("name", "production")
                    .with("value", prod),
            )
            .unwrap();
            s.log_event(&Event::new(job, Source::WM, 101, EventKind::Matched).with("destination", dest))
                .unwrap();
            if running {
                s.log_event(&Event::new(job, Source::LogMonitor, 1, EventKind::Running)).unwrap();
            }
        }
        let q = Query::new()
            .with("tag:production", &["xyz"])
            .with("state", &["Running"])
            .with("destination", &["X", "Y"]);
        assert_eq!(s.query(&q).unwrap(), vec!["j1", "j2"]);
        assert!(matches!(
            s.query(&Query::new().with("colour", &["red"])),
            Err(LbError::BadQuery(_))
        ));
        assert!(matches!(s.query(&Query::new()), Err(LbError::BadQuery(_))));
    }

    #[test]
    fn query_on_empty_store() {
        let (_d, s) = store();
        assert!(s.query(&Query::new().with("state", &["RUNNING"])).unwrap().is_empty());
    }

    #[test]
    fn torn_tail_is_repaired_on_next_append() {
        let (_d, s) = store();
        register(&s, "j1", "a");
        let path = s.path_for("j1").unwrap();
        let mut f = fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"job\":\"j1\",\"sr").unwrap();
        drop(f);
        assert_eq!(s.job("j1").unwrap().events.len(), 1);
        s.log_event(&Event::new("j1", Source::WM, 2, EventKind::Accepted)).unwrap();
        s.clear_cache();
        let r = s.job("j1").unwrap();
        assert_eq!((r.events.len(), r.state), (2, JobState::Waiting));
    }
}
