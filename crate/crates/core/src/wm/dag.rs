use std::collections::BTreeMap;

use crate::fault::Faults;
use crate::fsq::Queue;
use crate::jdl::{validate_dag_text, validate_job_text, DagDescription};
use crate::lb::{Event, EventKind, JobRecord, JobState, LbError, LbStore, Source};
use crate::spool::Spool;

use super::abort::will_resubmit;
use super::partition::{node_job_id, partition_job};
use super::{is_dag_type, sseq, Request, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeStatus {
    Idle,
    Ready,
    Submitted,
    Done,
    Failed,
    Unreachable,
}

/// The DAG a dag or partition job stands for.
pub fn dag_of(rec: &JobRecord) -> std::result::Result<DagDescription, String> {
    match rec.job_type.as_str() {
        "dag" => validate_dag_text(&rec.jdl).map_err(|v| v.to_string()),
        "partition" => {
            let job = validate_job_text(&rec.jdl).map_err(|v| v.to_string())?;
            partition_job(&rec.job_id, &job).map_err(|v| v.to_string())
        }
        other => Err(format!("job type {other} is not a DAG")),
    }
}

/// Status of one node as recorded in the LB, before readiness is decided.
pub fn node_status(lb: &LbStore, node_id: &str) -> Result<NodeStatus> {
    let rec = match lb.job(node_id) {
        Ok(r) => r,
        Err(LbError::UnknownJob(_)) => return Ok(NodeStatus::Idle),
        Err(e) => return Err(e.into()),
    };
    Ok(match rec.state {
        JobState::DoneOk => NodeStatus::Done,
        JobState::Aborted
            if rec
                .events
                .iter()
                .any(|e| e.kind == EventKind::Aborted && e.get("reason") == Some("unreachable")) =>
        {
            NodeStatus::Unreachable
        }
        JobState::Aborted if will_resubmit(&rec) => NodeStatus::Submitted,
        s if s.is_terminal() => NodeStatus::Failed,
        _ => NodeStatus::Submitted,
    })
}

/// Walks running DAGs, submitting nodes whose parents are all done. Nodes are
/// bound to resources only when the WM handles their submission.
pub struct DagEngine {
    lb: LbStore,
    requests: Queue,
    faults: Faults,
}

impl DagEngine {
    pub fn new(spool: &Spool, faults: Faults) -> Result<DagEngine> {
        Ok(DagEngine {
            lb: LbStore::open(spool.lbstore())?,
            requests: Queue::open_with_faults(spool.wm_requests(), faults.clone())?,
            faults,
        })
    }

    pub fn step(&mut self) -> Result<bool> {
        let mut progressed = false;
        for rec in self.lb.records()? {
            if is_dag_type(&rec) && rec.state == JobState::Running {
                progressed |= self.advance(&rec)?;
            }
        }
        Ok(progressed)
    }

    fn advance(&self, rec: &JobRecord) -> Result<bool> {
        let dag = match dag_of(rec) {
            Ok(d) => d,
            Err(why) => {
                log::warn!("dag {} unusable: {why}", rec.job_id);
                return Ok(false);
            }
        };
        let mut status = BTreeMap::new();
        for name in dag.nodes.keys() {
            status.insert(name.clone(), node_status(&self.lb, &node_job_id(&rec.job_id, name))?);
        }
        let mut progressed = false;

        // failures make every idle descendant unreachable
        for name in dag.nodes.keys() {
            if status[name] != NodeStatus::Idle {
                continue;
            }
            let doomed = dag.nodes.keys().any(|a| {
                matches!(status[a], NodeStatus::Failed | NodeStatus::Unreachable)
                    && dag.descendants(a).contains(name)
            });
            if doomed {
                self.register_node(rec, &dag, name)?;
                self.lb.log_event(
                    &Event::new(&node_job_id(&rec.job_id, name), Source::WM, sseq::at(1, sseq::UNREACHABLE), EventKind::Aborted)
                        .attempt(1)
                        .with("reason", "unreachable")
                        .with("final", "true"),
                )?;
                status.insert(name.clone(), NodeStatus::Unreachable);
                progressed = true;
            }
        }

        for name in dag.nodes.keys() {
            if status[name] == NodeStatus::Idle
                && dag.parents(name).iter().all(|p| status[*p] == NodeStatus::Done)
            {
                status.insert(name.clone(), NodeStatus::Ready);
            }
        }
        for (name, st) in status.clone() {
            if st == NodeStatus::Ready {
                self.register_node(rec, &dag, &name)?;
                self.faults.point("dag.after_register")?;
                let id = node_job_id(&rec.job_id, &name);
                self.lb.log_event(
                    &Event::new(&id, Source::WM, sseq::NODE_ACCEPTED, EventKind::Accepted).attempt(1),
                )?;
                self.requests.enqueue_json(&Request::submit(&id, &rec.owner, 1))?;
                status.insert(name, NodeStatus::Submitted);
                progressed = true;
            }
        }

        let pending = status
            .values()
            .any(|s| matches!(s, NodeStatus::Idle | NodeStatus::Ready | NodeStatus::Submitted));
        if !pending {
            let ok = status.values().all(|s| *s == NodeStatus::Done);
            self.lb.log_event(
                &Event::new(&rec.job_id, Source::WM, sseq::at(rec.attempt, sseq::DAG_DONE), EventKind::Done)
                    .attempt(rec.attempt)
                    .with("exitCode", if ok { 0 } else { 1 }),
            )?;
            progressed = true;
        }
        Ok(progressed)
    }

    fn register_node(&self, rec: &JobRecord, dag: &DagDescription, name: &str) -> Result<()> {
        let node = &dag.nodes[name];
        let id = node_job_id(&rec.job_id, name);
        // node sandboxes are uploaded with the DAG
        let mut ad = node.ad.clone();
        if !node.input_sandbox.is_empty() && ad.get_text("SandboxFrom").is_none() {
            ad.set_text("SandboxFrom", &rec.job_id);
        }
        self.lb.log_event(
            &Event::new(&id, Source::WM, sseq::NODE_REGISTERED, EventKind::Registered)
                .with("owner", &rec.owner)
                .with("jdl", ad.to_pretty())
                .with("type", "node")
                .with("parent", &rec.job_id)
                .attempt(1),
        )?;
        for (i, (k, v)) in node.user_tags.iter().enumerate() {
            self.lb.log_event(
                &Event::new(&id, Source::WM, sseq::NODE_TAG_BASE + i as u64, EventKind::UserTag)
                    .with("name", k)
                    .with("value", v),
            )?;
        }
        Ok(())
    }
}
