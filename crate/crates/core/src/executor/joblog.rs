use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::util::{complete_lines, open_locked_append};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecKind {
    Staged,
    Committed,
    Executing,
    Terminated,
    Aborted,
    Cancelled,
}

impl ExecKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExecKind::Terminated | ExecKind::Aborted | ExecKind::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecLogRecord {
    pub ts: u64,
    pub handle: String,
    #[serde(rename = "jobId")]
    pub job_id: String,
    pub kind: ExecKind,
    #[serde(default)]
    pub data: BTreeMap<String, String>,
}

/// Append-only executor log. Each (handle, kind) is written at most once,
/// and a handle gets at most one terminal record.
#[derive(Debug)]
pub struct JobLog {
    path: PathBuf,
    seen: HashSet<(String, ExecKind)>,
    last_ts: u64,
}

pub fn read_records(path: &Path) -> std::io::Result<Vec<ExecLogRecord>> {
    let buf = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(complete_lines(&buf)
        .0
        .into_iter()
        .filter_map(|l| serde_json::from_slice(l).ok())
        .collect())
}

impl JobLog {
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<JobLog> {
        let path = path.into();
        let recs = read_records(&path)?;
        Ok(JobLog {
            seen: recs.iter().map(|r| (r.handle.clone(), r.kind)).collect(),
            last_ts: recs.iter().map(|r| r.ts).max().unwrap_or(0),
            path,
        })
    }

    pub fn has(&self, handle: &str, kind: ExecKind) -> bool {
        self.seen.contains(&(handle.to_string(), kind))
    }

    pub fn terminal(&self, handle: &str) -> Option<ExecKind> {
        [ExecKind::Terminated, ExecKind::Aborted, ExecKind::Cancelled]
            .into_iter()
            .find(|k| self.has(handle, *k))
    }

    /// Appends unless already present. Returns whether a line was written.
    pub fn append_once(
        &mut self,
        handle: &str,
        job_id: &str,
        kind: ExecKind,
        data: BTreeMap<String, String>,
    ) -> std::io::Result<bool> {
        if self.has(handle, kind) || (kind.is_terminal() && self.terminal(handle).is_some()) {
            return Ok(false);
        }
        let mut f = open_locked_append(&self.path)?;
        // repair a torn tail left by a crash
        let len = f.seek(SeekFrom::End(0))?;
        if len > 0 {
            let mut last = [0u8; 1];
            f.seek(SeekFrom::Start(len - 1))?;
            f.read_exact(&mut last)?;
            if last[0] != b'\n' {
                let mut buf = Vec::new();
                f.seek(SeekFrom::Start(0))?;
                f.read_to_end(&mut buf)?;
                f.set_len(complete_lines(&buf).1 as u64)?;
            }
        }
        // keep timestamps monotone within the file
        let ts = crate::util::now_ms().max(self.last_ts);
        let rec = ExecLogRecord {
            ts,
            handle: handle.to_string(),
            job_id: job_id.to_string(),
            kind,
            data,
        };
        let mut line = serde_json::to_vec(&rec).map_err(std::io::Error::other)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.sync_data()?;
        self.last_ts = ts;
        self.seen.insert((handle.to_string(), kind));
        Ok(true)
    }
}
