use crate::fault::Faults;
use crate::fsq::Queue;
use crate::lb::{Event, EventKind, JobRecord, JobState, LbStore, Source};
use crate::spool::Spool;

use super::{is_dag_type, retry_count, sseq, Request, Result};

/// Whether an aborted job still has retry budget and a retryable failure.
pub fn will_resubmit(rec: &JobRecord) -> bool {
    if rec.state != JobState::Aborted || is_dag_type(rec) {
        return false;
    }
    let a = rec.attempt;
    let hopeless = rec.events.iter().any(|e| {
        e.attempt_tag().map_or(true, |t| t == a)
            && (e.kind == EventKind::Refused
                || e.kind == EventKind::Cancelled
                || (e.kind == EventKind::Aborted && e.get("final") == Some("true")))
    });
    !hopeless && a <= retry_count(rec)
}

/// Resubmits aborted jobs that still have retry budget.
pub struct AbortHandler {
    lb: LbStore,
    requests: Queue,
    faults: Faults,
}

impl AbortHandler {
    pub fn new(spool: &Spool, faults: Faults) -> Result<AbortHandler> {
        Ok(AbortHandler {
            lb: LbStore::open(spool.lbstore())?,
            requests: Queue::open_with_faults(spool.wm_requests(), faults.clone())?,
            faults,
        })
    }

    pub fn step(&mut self) -> Result<bool> {
        let mut n = false;
        for rec in self.lb.records()? {
            if will_resubmit(&rec) {
                self.on_job_aborted(&rec)?;
                n = true;
            }
        }
        Ok(n)
    }

    fn on_job_aborted(&self, rec: &JobRecord) -> Result<()> {
        let next = rec.attempt + 1;
        let reason = rec
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Aborted && e.attempt_tag() == Some(rec.attempt))
            .find_map(|e| e.get("reason"))
            .unwrap_or("aborted")
            .to_string();
        log::info!("resubmitting {} as attempt {next} after: {reason}", rec.job_id);
        self.lb.log_event(
            &Event::new(&rec.job_id, Source::WM, sseq::at(next, sseq::RESUBMITTED), EventKind::Resubmitted)
                .attempt(next)
                .with("reason", reason),
        )?;
        self.faults.point("abort.after_resubmitted")?;
        self.requests.enqueue_json(&Request::submit(&rec.job_id, &rec.owner, next))?;
        Ok(())
    }
}
