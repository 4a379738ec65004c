//! Network server: accepts client requests, validates JDL, stages input
//! sandboxes and forwards work to the workload manager queue. Also serves
//! bookkeeping reads.

mod client;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::accounting::{AccountingError, Ledger};
use crate::broker::Registry;
use crate::classad::parse_ad;
use crate::fault::{Crash, Faults};
use crate::fsq::{Queue, QueueError};
use crate::jdl::{
    check_relative_path, input_manifest, is_dag, validate_dag, validate_job, JobType, Violations,
};
use crate::lb::{Event, EventKind, JobRecord, LbError, LbStore, Query, Source};
use crate::spool::Spool;
use crate::util::atomic_write;
use crate::wm::{Request, RequestKind};

pub use client::{Client, ClientError};

pub const DEFAULT_PORT: u16 = 7846;
/// Sandbox chunk size before base64.
pub const CHUNK: usize = 64 * 1024;

/// Gateway sequence numbers for the events it logs.
const SSEQ_REGISTERED: u64 = 1;
const SSEQ_ACCEPTED: u64 = 2;
const SSEQ_TAG_BASE: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    #[serde(default)]
    pub id: String,
    pub cmd: String,
    #[serde(default)]
    pub user: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    pub status: String,
    pub body: Value,
}

impl WireResponse {
    pub fn ok(id: &str, body: Value) -> WireResponse {
        WireResponse {
            id: id.to_string(),
            status: "ok".into(),
            body,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Error code of a failed response.
    pub fn code(&self) -> Option<&str> {
        (!self.is_ok()).then(|| self.body.get("code").and_then(Value::as_str).unwrap_or("Internal"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    BadRequest,
    ValidationFailed,
    UnknownJob,
    Unauthorized,
    ChunkGap,
    UnknownFile,
    NoSuchState,
    UnknownAccount,
    InsufficientCredits,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwError {
    pub code: ErrorCode,
    pub message: String,
    pub detail: Option<Value>,
}

impl GwError {
    fn new(code: ErrorCode, message: impl Into<String>) -> GwError {
        GwError {
            code,
            message: message.into(),
            detail: None,
        }
    }

    fn bad(message: impl Into<String>) -> GwError {
        GwError::new(ErrorCode::BadRequest, message)
    }

    fn into_response(self, id: &str) -> WireResponse {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.detail {
            body["violations"] = d;
        }
        WireResponse {
            id: id.to_string(),
            status: "error".into(),
            body,
        }
    }
}

impl From<LbError> for GwError {
    fn from(e: LbError) -> GwError {
        let code = match e {
            LbError::UnknownJob(_) | LbError::InvalidJobId(_) => ErrorCode::UnknownJob,
            LbError::NoSuchState(_) => ErrorCode::NoSuchState,
            LbError::BadQuery(_) => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        GwError::new(code, e.to_string())
    }
}

impl From<QueueError> for GwError {
    fn from(e: QueueError) -> GwError {
        GwError::new(ErrorCode::Internal, e.to_string())
    }
}

impl From<std::io::Error> for GwError {
    fn from(e: std::io::Error) -> GwError {
        GwError::new(ErrorCode::Internal, e.to_string())
    }
}

impl From<Crash> for GwError {
    fn from(e: Crash) -> GwError {
        GwError::new(ErrorCode::Internal, e.to_string())
    }
}

impl From<AccountingError> for GwError {
    fn from(e: AccountingError) -> GwError {
        let code = match e {
            AccountingError::UnknownAccount(_) => ErrorCode::UnknownAccount,
            AccountingError::InsufficientCredits { .. } => ErrorCode::InsufficientCredits,
            AccountingError::NonPositiveAmount => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        GwError::new(code, e.to_string())
    }
}

type GwResult<T> = Result<T, GwError>;

/// A sandbox upload in progress.
#[derive(Debug)]
struct Upload {
    next_seq: u64,
    part: PathBuf,
}

pub struct Gateway {
    spool: Spool,
    lb: LbStore,
    requests: Queue,
    faults: Faults,
    uploads: Mutex<HashMap<(String, String), Upload>>,
    /// Serializes submissions that share an idempotency key.
    submit_lock: Mutex<()>,
}

fn arg_str<'a>(args: &'a Map<String, Value>, key: &str) -> GwResult<&'a str> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| GwError::bad(format!("missing string argument '{key}'")))
}

fn arg_u64(args: &Map<String, Value>, key: &str) -> GwResult<Option<u64>> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
            .map(Some)
            .ok_or_else(|| GwError::bad(format!("argument '{key}' must be a non-negative integer"))),
    }
}

fn violations_error(v: Violations) -> GwError {
    GwError {
        code: ErrorCode::ValidationFailed,
        message: v.to_string(),
        detail: Some(serde_json::to_value(&v.0).unwrap_or(Value::Null)),
    }
}

pub fn new_job_id() -> String {
    let date = chrono::Utc::now().format("%Y%m%d");
    let n: u32 = rand::thread_rng().gen_range(0..1 << 24);
    format!("wms-{date}-{n:06x}")
}

/// Summary of a job record as returned by `status`.
pub fn record_summary(rec: &JobRecord, verbose: bool) -> Value {
    let mut v = json!({
        "jobId": rec.job_id,
        "owner": rec.owner,
        "type": rec.job_type,
        "state": rec.state,
        "attempt": rec.attempt,
        "destination": rec.destination,
        "exitCode": rec.exit_code,
        "parent": rec.parent,
        "userTags": rec.user_tags,
    });
    if verbose {
        v["events"] = serde_json::to_value(&rec.events).unwrap_or(Value::Null);
        v["jdl"] = Value::String(rec.jdl.clone());
    }
    v
}

impl Gateway {
    pub fn open(spool: &Spool, faults: Faults) -> Result<Gateway, GwError> {
        Ok(Gateway {
            spool: spool.clone(),
            lb: LbStore::open(spool.lbstore())?,
            requests: Queue::open_with_faults(spool.wm_requests(), faults.clone())?,
            faults,
            uploads: Mutex::new(HashMap::new()),
            submit_lock: Mutex::new(()),
        })
    }

    pub fn lb(&self) -> &LbStore {
        &self.lb
    }

    /// Parses one request line and produces exactly one response.
    pub fn handle_line(&self, line: &str) -> WireResponse {
        match serde_json::from_str::<WireRequest>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or_default();
                GwError::bad(format!("malformed request: {e}")).into_response(&id)
            }
        }
    }

    pub fn handle(&self, req: &WireRequest) -> WireResponse {
        match self.dispatch(req) {
            Ok(body) => WireResponse::ok(&req.id, body),
            Err(e) => e.into_response(&req.id),
        }
    }

    fn dispatch(&self, req: &WireRequest) -> GwResult<Value> {
        let a = &req.args;
        match req.cmd.as_str() {
            "submit" => self.submit(&req.user, a, false),
            "submit-dag" => self.submit(&req.user, a, true),
            "cancel" => self.cancel(&req.user, arg_str(a, "jobId")?),
            "status" => {
                let rec = self.lb.job(arg_str(a, "jobId")?)?;
                let verbose = a.get("verbose").and_then(Value::as_bool).unwrap_or(false);
                Ok(record_summary(&rec, verbose))
            }
            "query" => {
                let q: Query = serde_json::from_value(Value::Object(a.clone()))
                    .map_err(|e| GwError::bad(format!("bad query: {e}")))?;
                Ok(json!({ "jobs": self.lb.query(&q)? }))
            }
            "get-state" => {
                let cp = self.lb.get_state(arg_str(a, "jobId")?, arg_u64(a, "seq")?)?;
                Ok(json!({ "seq": cp.seq, "attempt": cp.attempt, "pairs": cp.pairs }))
            }
            "save-state" => self.save_state(&req.user, a),
            "sandbox-put" => self.sandbox_put(&req.user, a),
            "output-list" => self.output_list(arg_str(a, "jobId")?),
            "output-get" => self.output_get(a),
            "resources" => self.resources(),
            "account-balance" => {
                let ledger = self.ledger()?;
                let id = arg_str(a, "account")?;
                Ok(json!({ "account": id, "balance": ledger.balance(id)? }))
            }
            "resubmit" => self.resubmit(&req.user, arg_str(a, "jobId")?, arg_u64(a, "fromState")?),
            other => Err(GwError::bad(format!("unknown command '{other}'"))),
        }
    }

    fn owned(&self, user: &str, job: &str) -> GwResult<JobRecord> {
        let rec = self.lb.job(job)?;
        if rec.owner != user {
            return Err(GwError::new(
                ErrorCode::Unauthorized,
                format!("job {job} belongs to {}", rec.owner),
            ));
        }
        Ok(rec)
    }

    fn key_path(&self, user: &str, key: &str) -> PathBuf {
        let h = hex::encode(Sha256::digest(format!("{user}\n{key}").as_bytes()));
        self.spool.root().join("gateway").join("keys").join(&h[..32])
    }

    fn submit(&self, user: &str, a: &Map<String, Value>, dag: bool) -> GwResult<Value> {
        if user.is_empty() {
            return Err(GwError::bad("requests must name a user"));
        }
        let text = arg_str(a, "jdl")?;
        let ad = parse_ad(text).map_err(|e| {
            GwError::new(ErrorCode::ValidationFailed, format!("syntax error: {e}"))
        })?;
        let (job_type, tags, manifest) = if dag || is_dag(&ad) {
            let d = validate_dag(&ad).map_err(violations_error)?;
            ("dag", d.user_tags(), input_manifest(text))
        } else {
            let j = validate_job(&ad).map_err(violations_error)?;
            let t = if j.job_type == JobType::Partitionable { "partition" } else { "job" };
            (t, j.user_tags.clone().into_iter().collect(), j.input_sandbox.clone())
        };
        if dag && job_type != "dag" {
            return Err(GwError::new(ErrorCode::ValidationFailed, "submit-dag needs a DAG description"));
        }

        // a retried submission with the same key names the same job
        let _guard = self.submit_lock.lock().unwrap_or_else(|e| e.into_inner());
        let key = a.get("requestKey").and_then(Value::as_str);
        let existing = key.and_then(|k| fs::read_to_string(self.key_path(user, k)).ok());
        let job_id = match existing {
            Some(id) => id.trim().to_string(),
            None => {
                let mut id = new_job_id();
                while self.lb.exists(&id) {
                    id = new_job_id();
                }
                if let Some(k) = key {
                    self.faults.op("write request key")?;
                    atomic_write(&self.key_path(user, k), id.as_bytes())?;
                }
                id
            }
        };

        self.lb.log_event(
            &Event::new(&job_id, Source::Gateway, SSEQ_REGISTERED, EventKind::Registered)
                .with("owner", user)
                .with("jdl", text)
                .with("type", job_type)
                .attempt(1),
        )?;
        self.faults.point("gw.after_register")?;
        for (i, (k, v)) in tags.iter().enumerate() {
            self.lb.log_event(
                &Event::new(&job_id, Source::Gateway, SSEQ_TAG_BASE + i as u64, EventKind::UserTag)
                    .with("name", k)
                    .with("value", v),
            )?;
        }
        fs::create_dir_all(self.spool.input(&job_id))?;
        let pending: Vec<&String> = manifest
            .iter()
            .filter(|f| !self.spool.input(&job_id).join(f).is_file())
            .collect();
        if pending.is_empty() {
            self.accept(&job_id, user, job_type == "dag" || job_type == "partition")?;
        }
        Ok(json!({ "jobId": job_id, "pendingInput": pending }))
    }

    /// Moves a registered job into the workload manager.
    fn accept(&self, job: &str, owner: &str, dag: bool) -> GwResult<()> {
        let marker = self.spool.root().join("gateway").join("accepted").join(job);
        if marker.exists() {
            return Ok(());
        }
        self.lb.log_event(
            &Event::new(job, Source::Gateway, SSEQ_ACCEPTED, EventKind::Accepted).attempt(1),
        )?;
        self.faults.point("gw.after_accept")?;
        let kind = if dag { RequestKind::SubmitDag } else { RequestKind::Submit };
        self.requests.enqueue_json(&Request::new(kind, job, owner))?;
        atomic_write(&marker, b"")?;
        Ok(())
    }

    fn cancel(&self, user: &str, job: &str) -> GwResult<Value> {
        let rec = self.owned(user, job)?;
        if rec.state.is_terminal() {
            return Ok(json!({ "jobId": job, "state": rec.state, "cancelled": false }));
        }
        self.requests
            .enqueue_json(&Request::new(RequestKind::Cancel, job, &rec.owner))?;
        Ok(json!({ "jobId": job, "cancelled": true }))
    }

    fn resubmit(&self, user: &str, job: &str, from: Option<u64>) -> GwResult<Value> {
        let rec = self.owned(user, job)?;
        if !rec.state.is_terminal() {
            return Err(GwError::bad(format!("job {job} is {}; only finished jobs can be resubmitted", rec.state)));
        }
        if let Some(seq) = from {
            self.lb.get_state(job, Some(seq))?;
        }
        let mut r = Request::new(RequestKind::ResubmitFromState, job, &rec.owner);
        r.attempt = rec.attempt + 1;
        r.state = from;
        self.requests.enqueue_json(&r)?;
        Ok(json!({ "jobId": job, "attempt": r.attempt }))
    }

    fn save_state(&self, user: &str, a: &Map<String, Value>) -> GwResult<Value> {
        let job = arg_str(a, "jobId")?;
        self.owned(user, job)?;
        let pairs: Vec<(String, String)> = match a.get("pairs") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|p| match p {
                    Value::Array(kv) if kv.len() == 2 => match (kv[0].as_str(), kv[1].as_str()) {
                        (Some(k), Some(v)) => Ok((k.to_string(), v.to_string())),
                        _ => Err(GwError::bad("pairs must be [name, value] strings")),
                    },
                    _ => Err(GwError::bad("pairs must be [name, value] strings")),
                })
                .collect::<GwResult<_>>()?,
            _ => return Err(GwError::bad("missing argument 'pairs'")),
        };
        if pairs.iter().any(|(k, _)| k.is_empty() || k.contains('=') || k.contains('\n')) {
            return Err(GwError::bad("variable names must be non-empty without '=' or newlines"));
        }
        let attempt = arg_u64(a, "attempt")?.map(|n| n as u32);
        let seq = self.lb.save_state(job, &pairs, attempt)?;
        Ok(json!({ "jobId": job, "seq": seq }))
    }

    fn sandbox_put(&self, user: &str, a: &Map<String, Value>) -> GwResult<Value> {
        let job = arg_str(a, "jobId")?;
        let name = arg_str(a, "name")?;
        let seq = arg_u64(a, "seq")?.ok_or_else(|| GwError::bad("missing argument 'seq'"))?;
        let eof = a.get("eof").and_then(Value::as_bool).unwrap_or(false);
        let data = B64
            .decode(a.get("data").and_then(Value::as_str).unwrap_or(""))
            .map_err(|e| GwError::bad(format!("bad base64: {e}")))?;
        if data.len() > CHUNK {
            return Err(GwError::bad(format!("chunk larger than {CHUNK} bytes")));
        }
        let rec = self.owned(user, job)?;
        let manifest = input_manifest(&rec.jdl);
        if !manifest.iter().any(|m| m == name) || check_relative_path(name).is_err() {
            return Err(GwError::new(ErrorCode::UnknownFile, format!("{name} is not in the input sandbox")));
        }
        let dir = self.spool.input(job);
        let key = (job.to_string(), name.to_string());
        let mut uploads = self.uploads.lock().unwrap_or_else(|e| e.into_inner());
        if seq == 1 {
            let part = dir.join(format!(".part-{}", hex::encode(Sha256::digest(name.as_bytes()))));
            fs::create_dir_all(&dir)?;
            fs::File::create(&part)?;
            uploads.insert(key.clone(), Upload { next_seq: 1, part });
        }
        let expected = uploads.get(&key).map_or(1, |u| u.next_seq);
        if seq != expected {
            uploads.remove(&key);
            return Err(GwError::new(
                ErrorCode::ChunkGap,
                format!("expected chunk {expected} of {name}, got {seq}"),
            ));
        }
        let up = uploads.get_mut(&key).expect("upload exists");
        let mut f = fs::OpenOptions::new().append(true).open(&up.part)?;
        f.write_all(&data)?;
        up.next_seq += 1;
        if !eof {
            return Ok(json!({ "jobId": job, "name": name, "seq": seq }));
        }
        f.sync_all()?;
        let part = uploads.remove(&key).expect("upload exists").part;
        drop(uploads);
        let dst = dir.join(name);
        if let Some(p) = dst.parent() {
            fs::create_dir_all(p)?;
        }
        fs::rename(&part, &dst)?;
        crate::util::sync_dir(&dir)?;
        let complete = manifest.iter().all(|m| dir.join(m).is_file());
        if complete && rec.state == crate::lb::JobState::Submitted {
            self.accept(job, &rec.owner, rec.job_type == "dag" || rec.job_type == "partition")?;
        }
        Ok(json!({ "jobId": job, "name": name, "seq": seq, "complete": complete }))
    }

    fn declared_output(&self, job: &str) -> GwResult<Vec<String>> {
        let rec = self.lb.job(job)?;
        let ad = parse_ad(&rec.jdl).map_err(|e| GwError::new(ErrorCode::Internal, e.to_string()))?;
        Ok(validate_job(&ad).map(|j| j.output_sandbox).unwrap_or_default())
    }

    fn output_list(&self, job: &str) -> GwResult<Value> {
        let dir = self.spool.output(job);
        let files: Vec<Value> = self
            .declared_output(job)?
            .into_iter()
            .filter_map(|n| {
                let size = fs::metadata(dir.join(&n)).ok()?.len();
                Some(json!({ "name": n, "size": size }))
            })
            .collect();
        Ok(json!({ "jobId": job, "files": files }))
    }

    fn output_get(&self, a: &Map<String, Value>) -> GwResult<Value> {
        let job = arg_str(a, "jobId")?;
        let name = arg_str(a, "name")?;
        let seq = arg_u64(a, "seq")?.unwrap_or(1).max(1);
        if !self.declared_output(job)?.iter().any(|n| n == name) {
            return Err(GwError::new(ErrorCode::UnknownFile, format!("{name} is not in the output sandbox")));
        }
        let path = self.spool.output(job).join(name);
        let (data, eof) = read_chunk(&path, seq).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                GwError::new(ErrorCode::UnknownFile, format!("{name} has not been produced"))
            }
            _ => e.into(),
        })?;
        Ok(json!({ "jobId": job, "name": name, "seq": seq, "data": B64.encode(data), "eof": eof }))
    }

    fn resources(&self) -> GwResult<Value> {
        let reg = Registry::new(crate::broker::DEFAULT_TTL);
        let err = |e: crate::broker::BrokerError| GwError::new(ErrorCode::Internal, e.to_string());
        reg.load_dir(&self.spool.resources(), true).map_err(err)?;
        reg.load_dir(&self.spool.registry(), false).map_err(err)?;
        let ads: Vec<String> = reg.list().iter().map(|ad| ad.to_pretty()).collect();
        Ok(json!({ "resources": ads }))
    }

    fn ledger(&self) -> GwResult<Ledger> {
        let accounts = self.spool.accounts_file();
        if !accounts.exists() {
            return Err(GwError::new(ErrorCode::UnknownAccount, "no accounts are configured"));
        }
        Ok(Ledger::open_with_accounts_file(self.spool.ledger(), &accounts)?)
    }
}

/// Chunk `seq` (1-based) of a file and whether it is the last one.
pub fn read_chunk(path: &Path, seq: u64) -> std::io::Result<(Vec<u8>, bool)> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = fs::File::open(path)?;
    let len = f.metadata()?.len();
    let start = (seq - 1) * CHUNK as u64;
    f.seek(SeekFrom::Start(start.min(len)))?;
    let mut buf = Vec::with_capacity(CHUNK);
    f.take(CHUNK as u64).read_to_end(&mut buf)?;
    Ok((buf, start + CHUNK as u64 >= len))
}

/// Serves newline-delimited JSON on `listener`, one thread per connection.
pub fn serve(listener: TcpListener, gw: Arc<Gateway>) -> std::io::Result<()> {
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let gw = Arc::clone(&gw);
        thread::spawn(move || {
            if let Err(e) = serve_stream(stream, &gw) {
                log::debug!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

/// Answers requests arriving on one connection until it closes.
pub fn serve_stream(stream: TcpStream, gw: &Gateway) -> std::io::Result<()> {
    let mut out = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = gw.handle_line(&line);
        let mut bytes = serde_json::to_vec(&resp).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        out.write_all(&bytes)?;
    }
    Ok(())
}
