//! Directory layout shared by every component.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spool {
    root: PathBuf,
}

impl Spool {
    pub fn new(root: impl Into<PathBuf>) -> Spool {
        Spool { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lbstore(&self) -> PathBuf {
        self.root.join("lbstore")
    }

    pub fn wm_requests(&self) -> PathBuf {
        self.root.join("wm-requests")
    }

    pub fn executor_submit(&self) -> PathBuf {
        self.root.join("executor-submit")
    }

    /// Fixture resource ads.
    pub fn resources(&self) -> PathBuf {
        self.root.join("resources")
    }

    /// Heartbeat ads published by the executor.
    pub fn registry(&self) -> PathBuf {
        self.root.join("registry")
    }

    pub fn accounts_file(&self) -> PathBuf {
        self.root.join("accounts.ad")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("accounting").join("ledger.log")
    }

    pub fn input(&self, job: &str) -> PathBuf {
        self.root.join("input").join(job)
    }

    pub fn output(&self, job: &str) -> PathBuf {
        self.root.join("output").join(job)
    }

    pub fn executor(&self) -> PathBuf {
        self.root.join("executor")
    }

    pub fn job_log(&self) -> PathBuf {
        self.executor().join("job.log")
    }

    pub fn job_log_offset(&self) -> PathBuf {
        self.executor().join("job.log.offset")
    }

    pub fn run_dir(&self, handle: &str) -> PathBuf {
        self.executor().join("run").join(handle)
    }

    pub fn exec_jobs(&self) -> PathBuf {
        self.executor().join("jobs")
    }

    pub fn cancel_tombstones(&self) -> PathBuf {
        self.executor().join("cancelled")
    }
}
