//! Executor: two-phase job staging, simulated compute elements running real
//! wrapper processes, the append-only job log and the log monitor.

mod joblog;
mod monitor;
pub mod wrapper;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::broker::publish_ad;
use crate::classad::{parse_ad, ClassAd, Expr};
use crate::fault::{Crash, Faults};
use crate::fsq::{Disposition, Queue, QueueError};
use crate::spool::Spool;
use crate::util::{atomic_write, now_ms};
use crate::wm::{SubmissionDescriptor, WrapperPlan};

pub use joblog::{read_records, ExecKind, ExecLogRecord, JobLog};
pub use monitor::{LogMonitor, MonitorError};

/// Message on the executor-submit queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ExecRequest {
    Submit { descriptor: Box<SubmissionDescriptor> },
    Cancel { job: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Staged,
    Committed,
    Launching,
    Running,
    Terminated,
    Aborted,
    Cancelled,
}

impl ExecStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExecStatus::Terminated | ExecStatus::Aborted | ExecStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedJob {
    pub handle: String,
    pub descriptor: SubmissionDescriptor,
    pub status: ExecStatus,
    pub staged_at: u64,
    pub pid: Option<i32>,
    pub launched_at: Option<u64>,
}

impl StagedJob {
    pub fn committed(&self) -> bool {
        !matches!(self.status, ExecStatus::Staged)
    }
}

/// What the wrapper is given, as `launch.json` in its run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchSpec {
    pub handle: String,
    pub job_id: String,
    pub attempt: u32,
    pub ce_id: String,
    pub run_dir: PathBuf,
    pub scratch: PathBuf,
    pub plan: WrapperPlan,
}

/// What the wrapper leaves behind, as `exit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperResult {
    /// Whether the user executable was started.
    pub started: bool,
    pub exit_code: Option<i32>,
    pub cpu_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("executor storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("unknown handle {0}")]
    UnknownHandle(String),
    #[error("job {0} is already terminal")]
    AlreadyTerminal(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Crashed(#[from] Crash),
}

impl ExecError {
    pub fn is_crash(&self) -> bool {
        matches!(self, ExecError::Crashed(_) | ExecError::Queue(QueueError::Crashed(_)))
    }
}

pub type Result<T> = std::result::Result<T, ExecError>;

pub fn handle_for(idem_key: &str) -> String {
    format!("h-{}", &hex::encode(Sha256::digest(idem_key.as_bytes()))[..16])
}

/// Idempotency keys (`job#attempt`) of everything the executor has staged.
pub fn staged_keys(spool: &Spool) -> HashSet<String> {
    let mut out = HashSet::new();
    if let Ok(rd) = fs::read_dir(spool.exec_jobs()) {
        for e in rd.flatten() {
            if let Ok(j) = fs::read(e.path()).map(|b| serde_json::from_slice::<StagedJob>(&b)) {
                if let Ok(j) = j {
                    out.insert(j.descriptor.idem_key());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    /// Wrapper program; looked up on PATH when not absolute.
    pub wrapper: PathBuf,
    /// Prepended to the job's PATH, so jobs can call the checkpoint helper.
    pub extra_path: Option<PathBuf>,
    /// Gateway address exported to jobs as WMS_GATEWAY.
    pub gateway: Option<String>,
    pub commit_timeout: Duration,
    pub heartbeat_every: Duration,
    /// How long recovery waits for a wrapper's pid marker.
    pub launch_wait: Duration,
    /// Reported instead of measured run time, for reproducible charges.
    pub fixed_cpu_seconds: Option<f64>,
}

impl Default for ExecConfig {
    fn default() -> ExecConfig {
        ExecConfig {
            wrapper: PathBuf::from("wms-wrapper"),
            extra_path: None,
            gateway: None,
            commit_timeout: Duration::from_secs(30),
            heartbeat_every: Duration::from_secs(1),
            launch_wait: Duration::from_secs(2),
            fixed_cpu_seconds: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimCe {
    pub id: String,
    pub slots: usize,
    pub ad: ClassAd,
}

pub struct Executor {
    spool: Spool,
    config: ExecConfig,
    queue: Queue,
    ces: BTreeMap<String, SimCe>,
    jobs: BTreeMap<String, StagedJob>,
    children: BTreeMap<String, Child>,
    log: JobLog,
    faults: Faults,
    last_heartbeat: u64,
}

/// Compute elements described in the fixture directory.
pub fn load_ces(dir: &Path) -> std::io::Result<BTreeMap<String, SimCe>> {
    let mut out = BTreeMap::new();
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for e in rd.flatten() {
        let p = e.path();
        if p.extension().is_none_or(|x| x != "ad") {
            continue;
        }
        let Ok(ad) = parse_ad(&fs::read_to_string(&p)?) else { continue };
        if ad.get_text("Type").as_deref() != Some("CE") {
            continue;
        }
        let Some(id) = ad.get_text("Id") else { continue };
        let slots = ad.get_int("TotalCPUs").unwrap_or(1).max(1) as usize;
        out.insert(id.clone(), SimCe { id, slots, ad });
    }
    Ok(out)
}

fn pid_state(pid: i32) -> Option<char> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    let after = stat.rsplit_once(')')?.1;
    after.trim_start().chars().next()
}

/// Whether the process is gone. Reaps it when it is our child.
fn process_gone(pid: i32) -> bool {
    let mut status = 0;
    // SAFETY: plain syscalls on a pid we launched
    let r = unsafe { libc::waitpid(pid, &mut status, libc::WNOHANG) };
    if r == pid {
        return true;
    }
    if r == 0 {
        return false;
    }
    let alive = unsafe { libc::kill(pid, 0) } == 0;
    !alive || matches!(pid_state(pid), Some('Z') | Some('X') | None)
}

fn kill_group(pid: i32) {
    // SAFETY: signalling the process group led by our wrapper
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
        libc::kill(pid, libc::SIGKILL);
    }
}

impl Executor {
    /// Opens the executor and recovers whatever a previous instance left.
    pub fn open(spool: &Spool, config: ExecConfig, faults: Faults) -> Result<Executor> {
        fs::create_dir_all(spool.exec_jobs())?;
        let mut ex = Executor {
            spool: spool.clone(),
            queue: Queue::open_with_faults(spool.executor_submit(), faults.clone())?,
            ces: load_ces(&spool.resources())?,
            jobs: BTreeMap::new(),
            children: BTreeMap::new(),
            log: JobLog::open(spool.job_log())?,
            config,
            faults,
            last_heartbeat: 0,
        };
        ex.recover()?;
        Ok(ex)
    }

    pub fn ces(&self) -> &BTreeMap<String, SimCe> {
        &self.ces
    }

    pub fn jobs(&self) -> impl Iterator<Item = &StagedJob> {
        self.jobs.values()
    }

    pub fn job(&self, handle: &str) -> Option<&StagedJob> {
        self.jobs.get(handle)
    }

    fn job_path(&self, handle: &str) -> PathBuf {
        self.spool.exec_jobs().join(format!("{handle}.json"))
    }

    fn save(&mut self, job: StagedJob) -> Result<()> {
        self.faults.op("save job")?;
        let bytes = serde_json::to_vec_pretty(&job).map_err(std::io::Error::other)?;
        atomic_write(&self.job_path(&job.handle), &bytes)?;
        self.jobs.insert(job.handle.clone(), job);
        Ok(())
    }

    fn set_status(&mut self, handle: &str, status: ExecStatus) -> Result<()> {
        let mut j = self.jobs[handle].clone();
        j.status = status;
        self.save(j)
    }

    fn record(&mut self, handle: &str, kind: ExecKind, mut data: BTreeMap<String, String>) -> Result<()> {
        let j = &self.jobs[handle];
        data.insert("attempt".into(), j.descriptor.attempt.to_string());
        data.insert("ceId".into(), j.descriptor.ce_id.clone());
        let job_id = j.descriptor.job_id.clone();
        self.faults.op("append log")?;
        self.log.append_once(handle, &job_id, kind, data)?;
        Ok(())
    }

    fn recover(&mut self) -> Result<()> {
        self.queue.recover_scan(Duration::ZERO)?;
        for e in fs::read_dir(self.spool.exec_jobs())?.flatten() {
            let p = e.path();
            if p.extension().is_none_or(|x| x != "json") {
                // a stray temporary from a crashed save
                let _ = fs::remove_file(&p);
                continue;
            }
            match fs::read(&p).map(|b| serde_json::from_slice::<StagedJob>(&b)) {
                Ok(Ok(j)) => {
                    self.jobs.insert(j.handle.clone(), j);
                }
                _ => log::warn!("unreadable staged job {}", p.display()),
            }
        }
        let handles: Vec<String> = self.jobs.keys().cloned().collect();
        for h in handles {
            let status = self.jobs[&h].status;
            // records a crash may have kept from reaching the log
            self.record(&h, ExecKind::Staged, BTreeMap::new())?;
            if status != ExecStatus::Staged {
                self.record(&h, ExecKind::Committed, BTreeMap::new())?;
            }
            match status {
                ExecStatus::Launching => self.recover_launch(&h)?,
                _ => {}
            }
            // terminal records are written before the status is saved
            let logged = match self.log.terminal(&h) {
                Some(ExecKind::Terminated) => Some(ExecStatus::Terminated),
                Some(ExecKind::Cancelled) => Some(ExecStatus::Cancelled),
                Some(_) => Some(ExecStatus::Aborted),
                None => None,
            };
            if let Some(st) = logged {
                if !self.jobs[&h].status.is_terminal() {
                    if let Some(pid) = self.jobs[&h].pid {
                        kill_group(pid);
                    }
                    self.set_status(&h, st)?;
                }
            }
        }
        Ok(())
    }

    /// A crash hit between spawning a wrapper and saving its pid.
    fn recover_launch(&mut self, h: &str) -> Result<()> {
        let marker = self.spool.run_dir(h).join("wrapper.pid");
        let deadline = Instant::now() + self.config.launch_wait;
        loop {
            if let Some(pid) = fs::read_to_string(&marker).ok().and_then(|s| s.trim().parse().ok()) {
                let mut j = self.jobs[h].clone();
                j.pid = Some(pid);
                j.status = ExecStatus::Running;
                return self.save(j);
            }
            if Instant::now() >= deadline {
                return self.set_status(h, ExecStatus::Committed);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Phase one: durably record the job without making it runnable.
    pub fn stage(&mut self, d: &SubmissionDescriptor, idem_key: &str) -> Result<String> {
        if d.job_id.is_empty() {
            return Err(ExecError::InvalidDescriptor("empty job id".into()));
        }
        if !self.ces.contains_key(&d.ce_id) {
            return Err(ExecError::InvalidDescriptor(format!("unknown CE {}", d.ce_id)));
        }
        let handle = handle_for(idem_key);
        if self.jobs.contains_key(&handle) {
            self.record(&handle, ExecKind::Staged, BTreeMap::new())?;
            return Ok(handle);
        }
        self.save(StagedJob {
            handle: handle.clone(),
            descriptor: d.clone(),
            status: ExecStatus::Staged,
            staged_at: now_ms(),
            pid: None,
            launched_at: None,
        })?;
        self.record(&handle, ExecKind::Staged, BTreeMap::new())?;
        let tomb = self.spool.cancel_tombstones().join(&d.job_id);
        if tomb.exists() {
            self.record(&handle, ExecKind::Cancelled, reason("cancelled before staging"))?;
            self.set_status(&handle, ExecStatus::Cancelled)?;
            let _ = fs::remove_file(tomb);
        }
        Ok(handle)
    }

    /// Phase two: the job becomes runnable.
    pub fn commit(&mut self, handle: &str) -> Result<()> {
        let Some(j) = self.jobs.get(handle) else {
            return Err(ExecError::UnknownHandle(handle.to_string()));
        };
        if j.status == ExecStatus::Staged {
            self.set_status(handle, ExecStatus::Committed)?;
        }
        if self.jobs[handle].status.is_terminal() && !self.log.has(handle, ExecKind::Committed) {
            return Ok(());
        }
        self.record(handle, ExecKind::Committed, BTreeMap::new())
    }

    pub fn cancel(&mut self, handle: &str) -> Result<()> {
        let Some(j) = self.jobs.get(handle) else {
            return Err(ExecError::UnknownHandle(handle.to_string()));
        };
        if j.status.is_terminal() {
            return Err(ExecError::AlreadyTerminal(handle.to_string()));
        }
        if let Some(pid) = j.pid {
            kill_group(pid);
        }
        if let Some(mut c) = self.children.remove(handle) {
            let _ = c.kill();
            let _ = c.wait();
        }
        self.record(handle, ExecKind::Cancelled, reason("cancelled by user"))?;
        self.set_status(handle, ExecStatus::Cancelled)
    }

    /// Cancels every live handle of a job, or leaves a tombstone if the job
    /// has not arrived yet.
    pub fn cancel_job(&mut self, job: &str) -> Result<()> {
        let handles: Vec<(String, bool)> = self
            .jobs
            .values()
            .filter(|j| j.descriptor.job_id == job)
            .map(|j| (j.handle.clone(), j.status.is_terminal()))
            .collect();
        if handles.is_empty() {
            atomic_write(&self.spool.cancel_tombstones().join(job), b"")?;
            return Ok(());
        }
        for (h, terminal) in handles {
            if !terminal {
                self.cancel(&h)?;
            }
        }
        Ok(())
    }

    /// Kills one wrapper outright, as a worker node failure would.
    pub fn kill_wrapper(&mut self, handle: &str) -> bool {
        match self.jobs.get(handle).and_then(|j| j.pid) {
            Some(pid) => {
                kill_group(pid);
                true
            }
            None => false,
        }
    }

    /// Kills every wrapper running on a CE. Returns how many were hit.
    pub fn crash_ce(&mut self, ce: &str) -> usize {
        let victims: Vec<String> = self
            .jobs
            .values()
            .filter(|j| j.descriptor.ce_id == ce && j.status == ExecStatus::Running)
            .map(|j| j.handle.clone())
            .collect();
        victims.iter().filter(|h| self.kill_wrapper(h)).count()
    }

    fn busy_slots(&self, ce: &str) -> usize {
        self.jobs
            .values()
            .filter(|j| {
                j.descriptor.ce_id == ce
                    && matches!(j.status, ExecStatus::Launching | ExecStatus::Running)
            })
            .count()
    }

    /// One round of work. Returns whether anything changed.
    pub fn step(&mut self) -> Result<bool> {
        let mut progressed = false;
        if let Some(item) = self.queue.claim("executor")? {
            match item.decode::<ExecRequest>() {
                Ok(ExecRequest::Submit { descriptor }) => {
                    let key = descriptor.idem_key();
                    match self.stage(&descriptor, &key) {
                        Ok(h) => {
                            self.faults.point("exec.after_stage")?;
                            self.commit(&h)?;
                            self.faults.point("exec.after_commit")?;
                        }
                        Err(ExecError::InvalidDescriptor(why)) => {
                            log::warn!("rejecting descriptor for {}: {why}", descriptor.job_id);
                            let h = handle_for(&key);
                            let mut data = reason(&format!("rejected: {why}"));
                            data.insert("attempt".into(), descriptor.attempt.to_string());
                            self.log.append_once(&h, &descriptor.job_id, ExecKind::Aborted, data)?;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Ok(ExecRequest::Cancel { job }) => self.cancel_job(&job)?,
                Err(e) => log::warn!("dropping malformed executor request: {e}"),
            }
            self.queue.settle(item.seq, Disposition::Ack)?;
            progressed = true;
        }
        progressed |= self.collect_garbage()?;
        progressed |= self.reap()?;
        progressed |= self.schedule()?;
        self.heartbeat(false)?;
        Ok(progressed)
    }

    /// Staged jobs never committed within the timeout are aborted.
    fn collect_garbage(&mut self) -> Result<bool> {
        let cutoff = now_ms().saturating_sub(self.config.commit_timeout.as_millis() as u64);
        let stale: Vec<String> = self
            .jobs
            .values()
            .filter(|j| j.status == ExecStatus::Staged && j.staged_at <= cutoff)
            .map(|j| j.handle.clone())
            .collect();
        for h in &stale {
            self.record(h, ExecKind::Aborted, reason("commit timeout"))?;
            self.set_status(h, ExecStatus::Aborted)?;
        }
        Ok(!stale.is_empty())
    }

    fn schedule(&mut self) -> Result<bool> {
        let mut ready: Vec<(u64, String)> = self
            .jobs
            .values()
            .filter(|j| j.status == ExecStatus::Committed)
            .map(|j| (j.staged_at, j.handle.clone()))
            .collect();
        ready.sort();
        let mut progressed = false;
        for (_, h) in ready {
            let ce = self.jobs[&h].descriptor.ce_id.clone();
            let slots = self.ces.get(&ce).map_or(0, |c| c.slots);
            if self.busy_slots(&ce) < slots {
                self.launch(&h)?;
                progressed = true;
            }
        }
        Ok(progressed)
    }

    fn launch(&mut self, h: &str) -> Result<()> {
        self.set_status(h, ExecStatus::Launching)?;
        let run_dir = self.spool.run_dir(h);
        let _ = fs::remove_dir_all(&run_dir);
        fs::create_dir_all(&run_dir)?;
        let j = self.jobs[h].clone();
        let mut plan = j.descriptor.plan.clone();
        let mut path = std::env::var("PATH").unwrap_or_default();
        if let Some(extra) = &self.config.extra_path {
            path = format!("{}:{path}", extra.display());
        }
        plan.env.insert("PATH".into(), path);
        if let Some(gw) = &self.config.gateway {
            plan.env.insert("WMS_GATEWAY".into(), gw.clone());
        }
        let spec = LaunchSpec {
            handle: h.to_string(),
            job_id: j.descriptor.job_id.clone(),
            attempt: j.descriptor.attempt,
            ce_id: j.descriptor.ce_id.clone(),
            scratch: run_dir.join("scratch"),
            run_dir: run_dir.clone(),
            plan,
        };
        let spec_path = run_dir.join("launch.json");
        atomic_write(&spec_path, &serde_json::to_vec_pretty(&spec).map_err(std::io::Error::other)?)?;
        self.faults.point("exec.before_spawn")?;
        let wlog = fs::File::create(run_dir.join("wrapper.log"))?;
        let spawned = {
            use std::os::unix::process::CommandExt;
            Command::new(&self.config.wrapper)
                .arg(&spec_path)
                .stdin(Stdio::null())
                .stdout(wlog.try_clone()?)
                .stderr(wlog)
                .process_group(0)
                .spawn()
        };
        let child = match spawned {
            Ok(c) => c,
            Err(e) => {
                self.record(h, ExecKind::Aborted, reason(&format!("cannot start wrapper: {e}")))?;
                return self.set_status(h, ExecStatus::Aborted);
            }
        };
        let pid = child.id() as i32;
        self.children.insert(h.to_string(), child);
        self.faults.point("exec.after_spawn")?;
        let mut j = self.jobs[h].clone();
        j.status = ExecStatus::Running;
        j.pid = Some(pid);
        j.launched_at = Some(now_ms());
        self.save(j)
    }

    fn reap(&mut self) -> Result<bool> {
        let running: Vec<String> = self
            .jobs
            .values()
            .filter(|j| j.status == ExecStatus::Running)
            .map(|j| j.handle.clone())
            .collect();
        let mut progressed = false;
        for h in running {
            let run_dir = self.spool.run_dir(&h);
            if run_dir.join("started").exists() && !self.log.has(&h, ExecKind::Executing) {
                self.record(&h, ExecKind::Executing, BTreeMap::new())?;
                progressed = true;
            }
            let exit_file = run_dir.join("exit.json");
            let gone = match self.jobs[&h].pid {
                Some(pid) => {
                    if let Some(c) = self.children.get_mut(&h) {
                        matches!(c.try_wait(), Ok(Some(_)))
                    } else {
                        process_gone(pid)
                    }
                }
                None => true,
            };
            if !gone {
                continue;
            }
            self.children.remove(&h);
            let result: Option<WrapperResult> = fs::read(&exit_file)
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok());
            self.finish(&h, result)?;
            progressed = true;
        }
        Ok(progressed)
    }

    fn finish(&mut self, h: &str, result: Option<WrapperResult>) -> Result<()> {
        let d = self.jobs[h].descriptor.clone();
        match result {
            Some(r) if r.started => {
                self.record(h, ExecKind::Executing, BTreeMap::new())?;
                let ce = self.ces.get(&d.ce_id);
                let mut data = BTreeMap::new();
                data.insert("exitCode".into(), r.exit_code.unwrap_or(1).to_string());
                let cpu = self.config.fixed_cpu_seconds.unwrap_or(r.cpu_seconds);
                data.insert("cpuSeconds".into(), cpu.to_string());
                data.insert("owner".into(), d.owner.clone());
                if let Some(ce) = ce {
                    if let Some(p) = ce.ad.get_int("PricePerCpuSecond") {
                        data.insert("price".into(), p.to_string());
                    }
                    if let Some(g) = ce.ad.get_text("OwnerGroup") {
                        data.insert("ownerGroup".into(), g);
                    }
                }
                self.record(h, ExecKind::Terminated, data)?;
                self.faults.point("exec.after_exit_record")?;
                self.set_status(h, ExecStatus::Terminated)
            }
            Some(r) => {
                let why = r.error.unwrap_or_else(|| "wrapper failed".into());
                self.record(h, ExecKind::Aborted, reason(&why))?;
                self.set_status(h, ExecStatus::Aborted)
            }
            None => {
                self.record(h, ExecKind::Aborted, reason("worker lost: wrapper died"))?;
                self.set_status(h, ExecStatus::Aborted)
            }
        }
    }

    /// Publishes every CE's ad with its current free slots.
    pub fn heartbeat(&mut self, force: bool) -> Result<()> {
        let now = now_ms();
        if !force && now.saturating_sub(self.last_heartbeat) < self.config.heartbeat_every.as_millis() as u64 {
            return Ok(());
        }
        self.last_heartbeat = now;
        let dir = self.spool.registry();
        let ces: Vec<SimCe> = self.ces.values().cloned().collect();
        for ce in ces {
            let mut ad = ce.ad.clone();
            let free = ce.slots.saturating_sub(self.busy_slots(&ce.id));
            ad.set("FreeCPUs", Expr::int(free as i64));
            publish_ad(&dir, ad, now)?;
        }
        Ok(())
    }

    /// True when nothing is queued, staged or running.
    pub fn idle(&self) -> Result<bool> {
        Ok(self.queue.is_empty()? && self.jobs.values().all(|j| j.status.is_terminal()))
    }
}

fn reason(why: &str) -> BTreeMap<String, String> {
    [("reason".to_string(), why.to_string())].into()
}

/// Kills the wrapper process groups of a job's running attempts, as a
/// worker node failure would. Returns how many were hit.
pub fn kill_job_processes(spool: &Spool, job: &str) -> usize {
    let Ok(rd) = fs::read_dir(spool.exec_jobs()) else { return 0 };
    let mut n = 0;
    for e in rd.flatten() {
        let Ok(Ok(j)) = fs::read(e.path()).map(|b| serde_json::from_slice::<StagedJob>(&b)) else {
            continue;
        };
        if j.descriptor.job_id == job && j.status == ExecStatus::Running {
            if let Some(pid) = j.pid {
                kill_group(pid);
                n += 1;
            }
        }
    }
    n
}
