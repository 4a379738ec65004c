use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::classad::Value;
use crate::helper::{Helper, HelperError};
use crate::jdl::{validate_job_text, JobType, Listener};
use crate::lb::{LbError, LbStore};
use crate::spool::Spool;
use crate::util::atomic_write;

use super::partition::{node_job_id, split_node_id, AGGREGATE_EXECUTABLE};

/// How the wrapper turns the user process outcome into an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitRule {
    /// The process exit status; death by signal `n` reports `128 + n`.
    ExitStatus,
}

/// Everything the wrapper needs to run one attempt of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperPlan {
    pub executable: String,
    pub arguments: Vec<String>,
    pub std_input: Option<String>,
    pub std_output: Option<String>,
    pub std_error: Option<String>,
    /// Spool directory the input sandbox is copied from.
    pub input_dir: PathBuf,
    pub input_sandbox: Vec<String>,
    /// Spool directory the output sandbox is copied to.
    pub output_dir: PathBuf,
    pub output_sandbox: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub listener: Option<Listener>,
    /// Sub-job ids whose states the built-in aggregator merges.
    pub aggregate_from: Vec<String>,
    pub lb_root: PathBuf,
    /// The scratch directory is created fresh for every attempt and kept
    /// afterwards for inspection.
    pub fresh_scratch: bool,
    pub exit_rule: ExitRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionDescriptor {
    pub job_id: String,
    pub attempt: u32,
    pub owner: String,
    pub ce_id: String,
    pub se_id: Option<String>,
    pub final_jdl: String,
    pub plan: WrapperPlan,
}

impl SubmissionDescriptor {
    /// Key under which the executor deduplicates staging.
    pub fn idem_key(&self) -> String {
        format!("{}#{}", self.job_id, self.attempt)
    }
}

/// Path of the restore file for an attempt.
pub fn checkpoint_file(spool: &Spool, job: &str, attempt: u32) -> PathBuf {
    spool.input(job).join(format!(".wms-checkpoint-{attempt}"))
}

/// One `var=value` per line.
pub fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_pairs(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Second helper in the chain: resolved JDL in, descriptor JSON out.
pub struct JobAdapter {
    spool: Spool,
    lb: LbStore,
}

impl JobAdapter {
    pub fn new(spool: Spool, lb: LbStore) -> JobAdapter {
        JobAdapter { spool, lb }
    }

    pub fn adapt(&self, jdl: &str) -> Result<SubmissionDescriptor, HelperError> {
        let job = validate_job_text(jdl).map_err(|v| HelperError::Invalid(v.to_string()))?;
        let ce_id = job
            .submit_to()
            .ok_or_else(|| HelperError::Invalid("SubmitTo is missing".into()))?;
        let ad = &job.ad;
        let job_id = ad
            .get_text("JobId")
            .ok_or_else(|| HelperError::Invalid("JobId is missing".into()))?;
        let attempt = ad.get_int("Attempt").unwrap_or(1).max(1) as u32;
        let owner = ad.get_text("Owner").unwrap_or_default();
        let sandbox_job = ad.get_text("SandboxFrom").unwrap_or_else(|| job_id.clone());
        let input_dir = self.spool.input(&sandbox_job);
        for name in &job.input_sandbox {
            if !input_dir.join(name).is_file() {
                return Err(HelperError::MissingSandboxFile(name.clone()));
            }
        }

        let mut env = BTreeMap::new();
        env.insert("WMS_JOB_ID".to_string(), job_id.clone());
        env.insert("WMS_ATTEMPT".to_string(), attempt.to_string());
        env.insert("WMS_OWNER".to_string(), owner.clone());
        if let Some(seq) = ad.get_int("RestoreState") {
            let cp = self.lb.get_state(&job_id, Some(seq as u64)).map_err(|e| match e {
                LbError::NoSuchState(_) => HelperError::Invalid(format!("no saved state {seq}")),
                other => HelperError::Other(other.to_string()),
            })?;
            let path = checkpoint_file(&self.spool, &job_id, attempt);
            atomic_write(&path, format_pairs(&cp.pairs).as_bytes())
                .map_err(|e| HelperError::Other(e.to_string()))?;
            env.insert("WMS_CHECKPOINT_IN".to_string(), path.display().to_string());
        }
        if let (Some(first), Some(last)) = (ad.get_int("StepFirst"), ad.get_int("StepLast")) {
            env.insert("WMS_STEP_FIRST".to_string(), first.to_string());
            env.insert("WMS_STEP_LAST".to_string(), last.to_string());
        } else if let Some(steps) = job.job_steps {
            env.insert("WMS_STEP_FIRST".to_string(), "0".to_string());
            env.insert("WMS_STEP_LAST".to_string(), (steps - 1).to_string());
        }
        if job.job_type == JobType::Interactive {
            if let Some(l) = &job.listener {
                env.insert("WMS_LISTENER_HOST".to_string(), l.host.clone());
                env.insert("WMS_LISTENER_PORT".to_string(), l.port.to_string());
            }
        }

        let aggregate_from = if job.executable == AGGREGATE_EXECUTABLE {
            let dag = split_node_id(&job_id).map_or(job_id.as_str(), |(d, _)| d);
            match ad.eval_attr("AggregateFrom") {
                Value::List(items) => items
                    .iter()
                    .filter_map(|v| v.as_str().map(|n| node_job_id(dag, n)))
                    .collect(),
                _ => Vec::new(),
            }
        } else {
            Vec::new()
        };

        Ok(SubmissionDescriptor {
            job_id: job_id.clone(),
            attempt,
            owner,
            ce_id,
            se_id: ad.get_text("ChosenSE"),
            final_jdl: jdl.to_string(),
            plan: WrapperPlan {
                executable: job.executable.clone(),
                arguments: shlex::split(&job.arguments).unwrap_or_default(),
                std_input: job.std_input.clone(),
                std_output: job.std_output.clone(),
                std_error: job.std_error.clone(),
                input_dir,
                input_sandbox: job.input_sandbox.clone(),
                output_dir: self.spool.output(&job_id),
                output_sandbox: job.output_sandbox.clone(),
                env,
                listener: job.listener.clone().filter(|_| job.job_type == JobType::Interactive),
                aggregate_from,
                lb_root: self.spool.lbstore(),
                fresh_scratch: true,
                exit_rule: ExitRule::ExitStatus,
            },
        })
    }
}

impl Helper for JobAdapter {
    fn name(&self) -> &str {
        "adapter"
    }
    fn resolve(&self, jdl: &str) -> Result<String, HelperError> {
        let d = self.adapt(jdl)?;
        serde_json::to_string(&d).map_err(|e| HelperError::Other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lb::{Event, EventKind, Source};

    fn setup() -> (tempfile::TempDir, Spool, JobAdapter) {
        let d = tempfile::tempdir().unwrap();
        let spool = Spool::new(d.path());
        let lb = LbStore::open(spool.lbstore()).unwrap();
        let a = JobAdapter::new(spool.clone(), lb);
        (d, spool, a)
    }

    #[test]
    fn normal_job_has_no_checkpoint_env() {
        let (_d, _s, a) = setup();
        let d = a
            .adapt(r#"[ Executable = "/bin/echo"; Arguments = "a b"; SubmitTo = "CE1"; JobId = "j1"; ]"#)
            .unwrap();
        assert_eq!(d.plan.arguments, vec!["a", "b"]);
        assert!(!d.plan.env.contains_key("WMS_CHECKPOINT_IN"));
        assert_eq!(d.plan.env["WMS_JOB_ID"], "j1");
        assert_eq!(d.idem_key(), "j1#1");
    }

    #[test]
    fn interactive_job_exports_listener() {
        let (_d, _s, a) = setup();
        let d = a
            .adapt(
                r#"[ Executable = "/bin/cat"; JobType = "Interactive"; ListenerPort = 5555;
                     SubmitTo = "CE1"; JobId = "j1"; ]"#,
            )
            .unwrap();
        assert_eq!(d.plan.env["WMS_LISTENER_PORT"], "5555");
        assert!(d.plan.env.contains_key("WMS_LISTENER_HOST"));
    }

    #[test]
    fn restore_file_holds_saved_pairs() {
        let (_d, spool, a) = setup();
        let lb = LbStore::open(spool.lbstore()).unwrap();
        lb.log_event(&Event::new("j1", Source::Gateway, 1, EventKind::Registered)).unwrap();
        let pairs = vec![("step".to_string(), "3".to_string()), ("sum".to_string(), "3".to_string())];
        let seq = lb.save_state("j1", &pairs, None).unwrap();
        let d = a
            .adapt(&format!(
                r#"[ Executable = "x"; SubmitTo = "CE1"; JobId = "j1"; Attempt = 2; RestoreState = {seq}; ]"#
            ))
            .unwrap();
        let text = std::fs::read_to_string(&d.plan.env["WMS_CHECKPOINT_IN"]).unwrap();
        assert_eq!(text, "step=3\nsum=3\n");
        assert_eq!(parse_pairs(&text), pairs);
    }

    #[test]
    fn missing_input_file() {
        let (_d, _s, a) = setup();
        let err = a
            .adapt(r#"[ Executable = "x"; InputSandbox = { "in.dat" }; SubmitTo = "CE1"; JobId = "j1"; ]"#)
            .unwrap_err();
        assert_eq!(err, HelperError::MissingSandboxFile("in.dat".into()));
    }
}
