use std::collections::BTreeMap;

use crate::classad::{ClassAd, Expr};
use crate::jdl::{validate_job, DagDescription, JobDescription, JobType, Violation, ViolationCode, Violations};
use crate::lb::{JobState, LbError, LbStore};

pub const AGGREGATOR_NODE: &str = "aggregate";
/// Executable name the wrapper recognizes as the built-in state merger.
pub const AGGREGATE_EXECUTABLE: &str = "wms:aggregate";

/// Splits `[0, steps)` into `parts` contiguous half-open ranges whose sizes
/// differ by at most one; larger ranges come first.
pub fn step_ranges(steps: u32, parts: u32) -> Vec<(u32, u32)> {
    assert!(parts >= 1 && parts <= steps, "need 1 <= parts <= steps");
    let base = steps / parts;
    let extra = steps % parts;
    let mut out = Vec::with_capacity(parts as usize);
    let mut start = 0;
    for i in 0..parts {
        let len = base + u32::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

pub fn node_job_id(dag_id: &str, node: &str) -> String {
    format!("{dag_id}.{node}")
}

/// Parent DAG and node name of a node job id.
pub fn split_node_id(job_id: &str) -> Option<(&str, &str)> {
    job_id.split_once('.')
}

fn violation(attr: &str, msg: &str) -> Violations {
    Violations(vec![Violation {
        code: ViolationCode::Constraint,
        attribute: attr.to_string(),
        message: msg.to_string(),
    }])
}

/// Decomposes a partitionable job into checkpointable sub-jobs `n0..` plus
/// an aggregator node that depends on all of them.
pub fn partition_job(dag_id: &str, job: &JobDescription) -> Result<DagDescription, Violations> {
    if job.job_type != JobType::Partitionable {
        return Err(violation("JobType", "job is not Partitionable"));
    }
    let (Some(steps), Some(parts)) = (job.job_steps, job.sub_jobs) else {
        return Err(violation("JobSteps", "JobSteps and SubJobs are required"));
    };
    if parts == 0 || parts > steps {
        return Err(violation("SubJobs", "subJobs ≤ jobSteps is required"));
    }
    let mut nodes = BTreeMap::new();
    let mut deps = Vec::new();
    let mut names = Vec::new();
    for (i, (first, end)) in step_ranges(steps, parts).into_iter().enumerate() {
        let name = format!("n{i}");
        let mut ad = job.ad.clone();
        ad.set("JobType", Expr::text("Checkpointable"));
        ad.remove("SubJobs");
        ad.remove("UserTags");
        ad.set_int("StepFirst", first as i64);
        ad.set_int("StepLast", end as i64 - 1);
        ad.set_text("SandboxFrom", dag_id);
        nodes.insert(name.clone(), validate_job(&ad)?);
        deps.push((name.clone(), AGGREGATOR_NODE.to_string()));
        names.push(name);
    }
    let mut agg = ClassAd::new();
    agg.set_text("Executable", AGGREGATE_EXECUTABLE);
    agg.set("AggregateFrom", Expr::text_list(&names));
    agg.set("Requirements", job.requirements.clone());
    agg.set("RetryCount", Expr::int(job.retry_count as i64));
    nodes.insert(AGGREGATOR_NODE.to_string(), validate_job(&agg)?);
    let mut dag_ad = ClassAd::new();
    dag_ad.set_text("Type", "DAG");
    Ok(DagDescription {
        ad: dag_ad,
        nodes,
        dependencies: deps,
        aggregator: Some(AGGREGATOR_NODE.to_string()),
        warnings: Vec::new(),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("sub-jobs incomplete: {}", .0.join(", "))]
    SubJobIncomplete(Vec<String>),
    #[error(transparent)]
    Lb(#[from] LbError),
}

/// Union of each sub-job's latest saved state, variables prefixed with the
/// node name, sorted by (node, variable).
pub fn merge_states(lb: &LbStore, sub_job_ids: &[String]) -> Result<Vec<(String, String)>, MergeError> {
    let mut offenders = Vec::new();
    let mut merged = BTreeMap::new();
    for id in sub_job_ids {
        let node = split_node_id(id).map_or(id.as_str(), |(_, n)| n);
        let rec = match lb.job(id) {
            Ok(r) => r,
            Err(LbError::UnknownJob(_)) => {
                offenders.push(id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match (rec.state, rec.latest_checkpoint()) {
            (JobState::DoneOk, Some(cp)) => {
                for (k, v) in &cp.pairs {
                    merged.insert((node.to_string(), k.clone()), v.clone());
                }
            }
            _ => offenders.push(id.clone()),
        }
    }
    if !offenders.is_empty() {
        return Err(MergeError::SubJobIncomplete(offenders));
    }
    Ok(merged
        .into_iter()
        .map(|((n, k), v)| (format!("{n}.{k}"), v))
        .collect())
}
