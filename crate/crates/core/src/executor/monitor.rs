use std::fs;
use std::io::{Read, Seek, SeekFrom};
use std::path::PathBuf;

use crate::accounting::{AccountingError, Ledger};
use crate::fault::{Crash, Faults};
use crate::lb::{Event, EventKind, LbError, LbStore, Source};
use crate::spool::Spool;
use crate::util::{atomic_write, complete_lines};

use super::{ExecKind, ExecLogRecord};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("log monitor storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Lb(#[from] LbError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Crashed(#[from] Crash),
}

/// Tails the executor job log and forwards state-changing records to the
/// bookkeeping store. Also charges finished jobs to their owners.
pub struct LogMonitor {
    log_path: PathBuf,
    offset_path: PathBuf,
    lb: LbStore,
    ledger: Option<Ledger>,
    faults: Faults,
}

impl LogMonitor {
    pub fn open(spool: &Spool, faults: Faults) -> Result<LogMonitor, MonitorError> {
        let accounts = spool.accounts_file();
        let ledger = if accounts.exists() {
            Some(Ledger::open_with_accounts_file(spool.ledger(), &accounts)?)
        } else {
            None
        };
        Ok(LogMonitor {
            log_path: spool.job_log(),
            offset_path: spool.job_log_offset(),
            lb: LbStore::open(spool.lbstore())?,
            ledger,
            faults,
        })
    }

    pub fn offset(&self) -> u64 {
        fs::read_to_string(&self.offset_path)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0)
    }

    /// Forwards every complete record after the persisted offset. Returns the
    /// number of records consumed.
    pub fn step(&mut self) -> Result<usize, MonitorError> {
        let mut f = match fs::File::open(&self.log_path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e.into()),
        };
        let mut offset = self.offset();
        if offset > f.metadata()?.len() {
            log::warn!("job log shorter than saved offset {offset}; restarting from 0");
            offset = 0;
        }
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        let (lines, _) = complete_lines(&buf);
        let mut pos = offset;
        let mut count = 0;
        for line in lines {
            let at = pos;
            pos += line.len() as u64 + 1;
            match serde_json::from_slice::<ExecLogRecord>(line) {
                Ok(rec) => self.forward(&rec, at + 1)?,
                Err(e) => log::warn!("skipping corrupt job log record at byte {at}: {e}"),
            }
            self.faults.point("lm.after_forward")?;
            self.faults.op("write offset")?;
            atomic_write(&self.offset_path, pos.to_string().as_bytes())?;
            count += 1;
        }
        Ok(count)
    }

    fn forward(&self, rec: &ExecLogRecord, sseq: u64) -> Result<(), MonitorError> {
        let kind = match rec.kind {
            ExecKind::Staged => return Ok(()),
            ExecKind::Committed => EventKind::Committed,
            ExecKind::Executing => EventKind::Running,
            ExecKind::Terminated => EventKind::Done,
            ExecKind::Aborted => EventKind::Aborted,
            ExecKind::Cancelled => EventKind::Cancelled,
        };
        let mut ev = Event::new(&rec.job_id, Source::LogMonitor, sseq, kind);
        ev.ts = rec.ts;
        for key in ["attempt", "exitCode", "reason"] {
            if let Some(v) = rec.data.get(key) {
                ev = ev.with(key, v);
            }
        }
        if let Some(ce) = rec.data.get("ceId") {
            ev = ev.with("destination", ce);
        }
        match self.lb.log_event(&ev) {
            Ok(_) => {}
            Err(LbError::UnknownJob(_)) => {
                log::warn!("job log names unknown job {}", rec.job_id);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        }
        if rec.kind == ExecKind::Terminated {
            self.charge(rec)?;
        }
        Ok(())
    }

    fn charge(&self, rec: &ExecLogRecord) -> Result<(), MonitorError> {
        let Some(ledger) = &self.ledger else { return Ok(()) };
        let get = |k: &str| rec.data.get(k).map(String::as_str);
        let attempt = get("attempt").and_then(|s| s.parse().ok()).unwrap_or(1);
        let price = get("price").and_then(|s| s.parse().ok()).unwrap_or(0);
        let cpu = get("cpuSeconds").and_then(|s| s.parse().ok()).unwrap_or(0.0);
        let user = get("owner").unwrap_or_default();
        let group = get("ownerGroup").unwrap_or_default();
        let c = ledger.charge_job(&rec.job_id, attempt, user, group, price, cpu)?;
        if c.entry.amount == 0 && !c.duplicate {
            log::warn!("charge for {} recorded as deficit: {}", rec.job_id, c.entry.memo);
        }
        Ok(())
    }
}
