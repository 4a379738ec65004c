//! Workload manager: request dispatch through the helper chain, DAG and
//! partition driving, automatic resubmission and crash recovery.

mod abort;
mod adapter;
mod dag;
mod partition;

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::broker::{Broker, BrokerError, Registry, DEFAULT_TTL};
use crate::classad::{parse_ad, Expr};
use crate::executor::{staged_keys, ExecRequest};
use crate::fault::{Crash, Faults};
use crate::fsq::{Disposition, Queue, QueueError, QueueItem, DEFAULT_STALE_AFTER};
use crate::helper::{Helper, HelperError};
use crate::jdl::{check_relative_path, input_manifest};
use crate::lb::{Event, EventKind, JobRecord, JobState, LbError, LbStore, Source};
use crate::spool::Spool;
use crate::util::now_ms;

pub use abort::{will_resubmit, AbortHandler};
pub use adapter::{
    checkpoint_file, format_pairs, parse_pairs, ExitRule, JobAdapter, SubmissionDescriptor, WrapperPlan,
};
pub use dag::{dag_of, node_status, DagEngine, NodeStatus};
pub use partition::{
    merge_states, node_job_id, partition_job, split_node_id, step_ranges, MergeError, AGGREGATE_EXECUTABLE,
    AGGREGATOR_NODE,
};

/// Offsets added to `attempt * 100` to form WM source sequence numbers, so
/// every WM event is idempotent under redelivery.
pub(crate) mod sseq {
    pub const RESUBMITTED: u64 = 0;
    pub const MATCHED: u64 = 1;
    pub const STAGED: u64 = 2;
    pub const ABORTED: u64 = 3;
    pub const REFUSED: u64 = 4;
    pub const CANCELLED: u64 = 5;
    pub const DAG_RUNNING: u64 = 6;
    pub const DAG_DONE: u64 = 7;
    pub const UNREACHABLE: u64 = 9;
    /// Node registration and acceptance are outside the attempt scheme.
    pub const NODE_REGISTERED: u64 = 1;
    pub const NODE_ACCEPTED: u64 = 2;
    pub const LATE_ACCEPTED: u64 = 3;
    pub const NODE_TAG_BASE: u64 = 10;

    pub fn at(attempt: u32, offset: u64) -> u64 {
        attempt as u64 * 100 + offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    Submit,
    Cancel,
    ResubmitFromState,
    SubmitDag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub kind: RequestKind,
    pub job: String,
    #[serde(default)]
    pub owner: String,
    /// JDL text for submissions; the LB copy is authoritative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jdl: Option<String>,
    #[serde(default = "one")]
    pub attempt: u32,
    /// Checkpoint seq to restart from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<u64>,
    #[serde(default)]
    pub not_before: u64,
    #[serde(default)]
    pub match_tries: u32,
}

fn one() -> u32 {
    1
}

impl Request {
    pub fn new(kind: RequestKind, job: &str, owner: &str) -> Request {
        Request {
            kind,
            job: job.to_string(),
            owner: owner.to_string(),
            jdl: None,
            attempt: 1,
            state: None,
            not_before: 0,
            match_tries: 0,
        }
    }

    pub fn submit(job: &str, owner: &str, attempt: u32) -> Request {
        Request {
            attempt,
            ..Request::new(RequestKind::Submit, job, owner)
        }
    }
}

#[derive(Debug, Clone)]
pub struct WmConfig {
    pub strategy: String,
    pub seed: Option<u64>,
    /// Deliveries of one request before it is dead-lettered.
    pub max_queue_attempts: u32,
    /// Broker retries after "no matching resources" before aborting.
    pub match_retries: u32,
    pub retry_backoff: Duration,
    /// Minimum quiet time before a job is considered orphaned.
    pub orphan_grace: Duration,
    pub registry_ttl: Duration,
    pub stale_claim: Duration,
}

impl Default for WmConfig {
    fn default() -> WmConfig {
        WmConfig {
            strategy: "best".into(),
            seed: None,
            max_queue_attempts: 3,
            match_retries: 2,
            retry_backoff: Duration::from_secs(1),
            orphan_grace: Duration::from_secs(30),
            registry_ttl: DEFAULT_TTL,
            stale_claim: DEFAULT_STALE_AFTER,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WmError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Lb(#[from] LbError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Crashed(#[from] Crash),
}

impl WmError {
    pub fn is_crash(&self) -> bool {
        matches!(self, WmError::Crashed(_) | WmError::Queue(QueueError::Crashed(_)))
    }
}

pub type Result<T> = std::result::Result<T, WmError>;

pub(crate) fn is_dag_type(rec: &JobRecord) -> bool {
    rec.job_type == "dag" || rec.job_type == "partition"
}

pub(crate) fn retry_count(rec: &JobRecord) -> u32 {
    parse_ad(&rec.jdl)
        .ok()
        .and_then(|ad| ad.get_int("RetryCount"))
        .unwrap_or(0)
        .max(0) as u32
}

const OWNER: &str = "wm";

pub struct WorkloadManager {
    spool: Spool,
    config: WmConfig,
    lb: LbStore,
    requests: Queue,
    exec: Queue,
    broker: Broker,
    adapter: JobAdapter,
    faults: Faults,
    last_sweep: u64,
}

impl WorkloadManager {
    pub fn new(spool: &Spool, config: WmConfig, faults: Faults) -> Result<WorkloadManager> {
        let registry = Registry::new(config.registry_ttl);
        registry.load_dir(&spool.resources(), true)?;
        let broker = Broker::new(registry).with_strategy(&config.strategy, config.seed)?;
        let lb = LbStore::open(spool.lbstore())?;
        Ok(WorkloadManager {
            spool: spool.clone(),
            requests: Queue::open_with_faults(spool.wm_requests(), faults.clone())?,
            exec: Queue::open_with_faults(spool.executor_submit(), faults.clone())?,
            adapter: JobAdapter::new(spool.clone(), lb.clone()),
            lb,
            broker,
            config,
            faults,
            last_sweep: 0,
        })
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    /// Startup recovery: return every claim to the queue and requeue jobs
    /// that nothing is working on.
    pub fn recover(&mut self) -> Result<usize> {
        self.requests.recover_scan(Duration::ZERO)?;
        self.sweep_orphans(Duration::ZERO)
    }

    /// Processes at most one request, then runs the periodic orphan sweep.
    /// Returns whether anything was done.
    pub fn step(&mut self) -> Result<bool> {
        let now = now_ms();
        if now.saturating_sub(self.last_sweep) >= self.config.orphan_grace.as_millis() as u64 / 2 {
            self.last_sweep = now;
            self.requests.recover_scan(self.config.stale_claim)?;
            self.sweep_orphans(self.config.orphan_grace)?;
        }
        let Some(item) = self.requests.claim(OWNER)? else {
            return Ok(false);
        };
        let req: Request = match item.decode() {
            Ok(r) => r,
            Err(e) => {
                log::warn!("malformed request {}: {e}", item.seq);
                return self.reject(&item, None, "malformed request").map(|_| true);
            }
        };
        if item.attempts > self.config.max_queue_attempts {
            return self.reject(&item, Some(&req), "too many delivery attempts").map(|_| true);
        }
        if req.not_before > now {
            // delayed retry: move to the tail and let other work through
            self.requests.enqueue_json(&req)?;
            self.requests.settle(item.seq, Disposition::Ack)?;
            return Ok(false);
        }
        match req.kind {
            RequestKind::Submit | RequestKind::ResubmitFromState | RequestKind::SubmitDag => {
                self.handle_submit(&req)?
            }
            RequestKind::Cancel => self.handle_cancel(&req.job)?,
        }
        self.faults.point("wm.before_ack")?;
        self.requests.settle(item.seq, Disposition::Ack)?;
        Ok(true)
    }

    /// Drops a poison request, or returns it for another try.
    fn reject(&self, item: &QueueItem, req: Option<&Request>, why: &str) -> Result<()> {
        if item.attempts < self.config.max_queue_attempts && req.is_none() {
            self.requests.settle(item.seq, Disposition::Nack)?;
            return Ok(());
        }
        if let Some(r) = req {
            if let Ok(rec) = self.lb.job(&r.job) {
                let a = rec.attempt;
                self.log(
                    Event::new(&r.job, Source::WM, sseq::at(a, sseq::REFUSED), EventKind::Refused)
                        .attempt(a)
                        .with("reason", why),
                )?;
            }
        }
        log::warn!("dead-lettering request {}: {why}", item.seq);
        self.requests.settle(item.seq, Disposition::Ack)?;
        Ok(())
    }

    fn log(&self, e: Event) -> Result<()> {
        self.lb.log_event(&e)?;
        Ok(())
    }

    fn handle_submit(&mut self, req: &Request) -> Result<()> {
        let rec = match self.lb.job(&req.job) {
            Ok(r) => r,
            Err(LbError::UnknownJob(_)) => {
                log::warn!("request for unknown job {}", req.job);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        if is_dag_type(&rec) {
            return self.start_dag(&rec);
        }
        let target = req.attempt.max(1);
        let mut rec = rec;
        if req.kind == RequestKind::ResubmitFromState && rec.attempt < target {
            if !rec.state.is_terminal() || rec.state == JobState::Cleared {
                return Ok(());
            }
            let mut ev = Event::new(&req.job, Source::WM, sseq::at(target, sseq::RESUBMITTED), EventKind::Resubmitted)
                .attempt(target)
                .with("reason", "user request");
            if let Some(s) = req.state {
                ev = ev.with("fromState", s);
            }
            self.log(ev)?;
            rec = self.lb.job(&req.job)?;
        }
        if rec.attempt != target || rec.state.is_terminal() || rec.state >= JobState::Scheduled {
            log::debug!("dropping stale request for {} attempt {target}", req.job);
            return Ok(());
        }

        let mut ad = match parse_ad(&rec.jdl) {
            Ok(ad) => ad,
            Err(e) => {
                return self.abort_final(&req.job, target, &format!("unparsable JDL: {e}"));
            }
        };
        ad.set_text("JobId", &req.job);
        ad.set_text("Owner", &rec.owner);
        ad.set_int("Attempt", target as i64);
        if let Some(seq) = restore_seq(&rec, target) {
            ad.set_int("RestoreState", seq as i64);
        }

        // redelivery after a crash: keep the resource already chosen
        let matched = rec
            .events_of_attempt(target)
            .filter(|e| e.kind == EventKind::Matched && e.attempt_tag() == Some(target))
            .last()
            .cloned();
        let resolved = if let Some(m) = matched {
            ad.set_text("SubmitTo", m.get("destination").unwrap_or_default());
            if let Some(se) = m.get("se") {
                ad.set_text("ChosenSE", se);
            }
            ad.to_pretty()
        } else {
            self.faults.point("wm.before_match")?;
            self.broker.registry().load_dir(&self.spool.registry(), false)?;
            let excluded = previous_failed_ce(&rec, target);
            let with_exclusion = excluded.as_ref().map(|ce| {
                let mut a = ad.clone();
                a.set("ExcludedCEs", Expr::text_list(&[ce]));
                a.to_pretty()
            });
            let attempt_once = |text: &str| self.broker.resolve(text);
            let result = match with_exclusion {
                Some(t) => match attempt_once(&t) {
                    Err(HelperError::NoMatchingResources) => attempt_once(&ad.to_pretty()),
                    other => other,
                },
                None => attempt_once(&ad.to_pretty()),
            };
            let text = match result {
                Ok(t) => t,
                Err(HelperError::NoMatchingResources) => return self.no_match(req, target),
                Err(e) => return self.abort_final(&req.job, target, &e.to_string()),
            };
            let out = parse_ad(&text).expect("broker output parses");
            let mut ev = Event::new(&req.job, Source::WM, sseq::at(target, sseq::MATCHED), EventKind::Matched)
                .attempt(target)
                .with("destination", out.get_text("SubmitTo").unwrap_or_default());
            if let Some(se) = out.get_text("ChosenSE") {
                ev = ev.with("se", se);
            }
            self.log(ev)?;
            self.faults.point("wm.after_match")?;
            text
        };

        let descriptor = match self.adapter.adapt(&resolved) {
            Ok(d) => d,
            Err(e) => return self.abort_final(&req.job, target, &e.to_string()),
        };
        let dest = descriptor.ce_id.clone();
        self.exec.enqueue_json(&ExecRequest::Submit {
            descriptor: Box::new(descriptor),
        })?;
        self.faults.point("wm.after_enqueue")?;
        self.log(
            Event::new(&req.job, Source::WM, sseq::at(target, sseq::STAGED), EventKind::Staged)
                .attempt(target)
                .with("destination", dest),
        )?;
        Ok(())
    }

    fn no_match(&self, req: &Request, attempt: u32) -> Result<()> {
        if req.match_tries < self.config.match_retries {
            let mut again = req.clone();
            again.match_tries += 1;
            again.not_before = now_ms() + self.config.retry_backoff.as_millis() as u64;
            self.requests.enqueue_json(&again)?;
            return Ok(());
        }
        self.abort_final(&req.job, attempt, "no matching resources")
    }

    /// Aborts an attempt in a way the abort handler will not retry.
    fn abort_final(&self, job: &str, attempt: u32, reason: &str) -> Result<()> {
        self.log(
            Event::new(job, Source::WM, sseq::at(attempt, sseq::ABORTED), EventKind::Aborted)
                .attempt(attempt)
                .with("reason", reason)
                .with("final", "true"),
        )
    }

    fn start_dag(&self, rec: &JobRecord) -> Result<()> {
        if rec.state != JobState::Waiting {
            return Ok(());
        }
        if let Err(why) = dag_of(rec) {
            return self.abort_final(&rec.job_id, rec.attempt, &why);
        }
        self.log(
            Event::new(&rec.job_id, Source::WM, sseq::at(rec.attempt, sseq::DAG_RUNNING), EventKind::Running)
                .attempt(rec.attempt),
        )
    }

    fn handle_cancel(&self, job: &str) -> Result<()> {
        let rec = match self.lb.job(job) {
            Ok(r) => r,
            Err(LbError::UnknownJob(_)) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        if rec.state.is_terminal() {
            return Ok(());
        }
        if is_dag_type(&rec) {
            if let Ok(dag) = dag_of(&rec) {
                for node in dag.nodes.keys() {
                    self.handle_cancel(&node_job_id(job, node))?;
                }
            }
        } else if rec.state >= JobState::Ready {
            self.exec.enqueue_json(&ExecRequest::Cancel { job: job.to_string() })?;
            return Ok(());
        }
        self.log(
            Event::new(job, Source::WM, sseq::at(rec.attempt, sseq::CANCELLED), EventKind::Cancelled)
                .attempt(rec.attempt)
                .with("reason", "cancelled by user"),
        )
    }

    /// Requeues live jobs that no queue or executor knows about. Returns how
    /// many requests were created.
    pub fn sweep_orphans(&self, grace: Duration) -> Result<usize> {
        let mut queued = HashSet::new();
        for (item, _) in self.requests.scan()? {
            if let Ok(r) = item.decode::<Request>() {
                queued.insert(r.job);
            }
        }
        let mut staged = staged_keys(&self.spool);
        for (item, _) in self.exec.scan()? {
            if let Ok(ExecRequest::Submit { descriptor }) = item.decode::<ExecRequest>() {
                staged.insert(descriptor.idem_key());
            }
        }
        let now = now_ms();
        let grace = grace.as_millis() as u64;
        let mut n = 0;
        for rec in self.lb.records()? {
            if rec.state.is_terminal() || rec.state >= JobState::Scheduled || queued.contains(&rec.job_id) {
                continue;
            }
            let quiet = rec.events.iter().map(|e| e.ts).max().unwrap_or(0);
            if now.saturating_sub(quiet) < grace {
                continue;
            }
            if staged.contains(&format!("{}#{}", rec.job_id, rec.attempt)) {
                continue;
            }
            if is_dag_type(&rec) && rec.state > JobState::Waiting {
                continue;
            }
            if rec.state == JobState::Submitted {
                if !input_complete(&self.spool, &rec) {
                    continue;
                }
                self.log(
                    Event::new(&rec.job_id, Source::WM, sseq::LATE_ACCEPTED, EventKind::Accepted)
                        .attempt(rec.attempt),
                )?;
            }
            let kind = if is_dag_type(&rec) {
                RequestKind::SubmitDag
            } else {
                RequestKind::Submit
            };
            let mut req = Request::new(kind, &rec.job_id, &rec.owner);
            req.attempt = rec.attempt;
            log::info!("requeueing orphaned job {} attempt {}", rec.job_id, rec.attempt);
            self.requests.enqueue_json(&req)?;
            n += 1;
        }
        Ok(n)
    }
}

/// Checkpoint to restart attempt `target` from: the state named by the
/// resubmission, else the latest one saved.
fn restore_seq(rec: &JobRecord, target: u32) -> Option<u64> {
    if target <= 1 {
        return None;
    }
    let named = rec
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Resubmitted && e.attempt_tag() == Some(target))
        .find_map(|e| e.get("fromState")?.parse().ok());
    named.or_else(|| rec.latest_checkpoint().map(|c| c.seq))
}

/// The resource used by the previous attempt, if that attempt aborted there.
fn previous_failed_ce(rec: &JobRecord, target: u32) -> Option<String> {
    if target <= 1 {
        return None;
    }
    let prev = target - 1;
    let aborted = rec
        .events
        .iter()
        .any(|e| e.attempt_tag() == Some(prev) && e.kind == EventKind::Aborted);
    if !aborted {
        return None;
    }
    rec.events
        .iter()
        .filter(|e| e.attempt_tag() == Some(prev) && e.kind == EventKind::Matched)
        .filter_map(|e| e.get("destination"))
        .last()
        .map(str::to_string)
}

/// True when every declared input sandbox file has been uploaded.
pub fn input_complete(spool: &Spool, rec: &JobRecord) -> bool {
    let dir = spool.input(&rec.job_id);
    input_manifest(&rec.jdl)
        .iter()
        .all(|f| check_relative_path(f).is_ok() && dir.join(f).is_file())
}
