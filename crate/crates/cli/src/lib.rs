//! The `wms` user interface. Every subcommand is one gateway request plus
//! local file handling.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use wms_core::classad::parse_ad;
use wms_core::gateway::{Client, ClientError};
use wms_core::interactive::{accept_job, bridge_session};
use wms_core::jdl::input_manifest;

pub const DEFAULT_GATEWAY: &str = "127.0.0.1:7846";

#[derive(Debug, Parser)]
#[command(name = "wms", about = "Submit, monitor and control grid jobs")]
pub struct Cli {
    /// Gateway address as host:port.
    #[arg(long, global = true, env = "WMS_GATEWAY", default_value = DEFAULT_GATEWAY)]
    pub gateway: String,
    /// Identity asserted to the gateway.
    #[arg(long, global = true, env = "WMS_USER")]
    pub user: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upload the input sandbox and submit a job; prints the job id.
    Submit {
        jdl: PathBuf,
        /// For interactive jobs: do not attach after submitting.
        #[arg(long)]
        detach: bool,
        /// Idempotency key; resubmitting with the same key names the same job.
        #[arg(long)]
        key: Option<String>,
    },
    /// Submit a DAG description.
    SubmitDag { jdl: PathBuf },
    /// Show a job's state.
    Status {
        job: String,
        #[arg(long)]
        verbose: bool,
    },
    /// List jobs matching every given field; repeated flags are alternatives.
    Query {
        #[arg(long = "tag", value_name = "NAME=VALUE")]
        tags: Vec<String>,
        #[arg(long = "state")]
        states: Vec<String>,
        #[arg(long = "dest")]
        dests: Vec<String>,
        #[arg(long = "owner")]
        owners: Vec<String>,
    },
    Cancel { job: String },
    /// Download the output sandbox into a directory.
    Output { job: String, dir: PathBuf },
    /// Print a saved job state, one var=value per line.
    ChkptGet {
        job: String,
        #[arg(long)]
        seq: Option<u64>,
    },
    /// Run a finished job again, optionally from a saved state.
    Resubmit {
        job: String,
        #[arg(long)]
        from_state: Option<u64>,
    },
    /// List resource ads known to the gateway.
    Resources,
    Balance { account: String },
    /// Connect the terminal to a running interactive job.
    Attach {
        job: String,
        /// Seconds to wait for the job to connect.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, or the gateway refused the request.
    User(String),
    /// The gateway could not be reached.
    Transport(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Transport(_) => 2,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Failure {
        match e {
            ClientError::Transport(io) => Failure::Transport(io.to_string()),
            ClientError::Remote { code, message, body } => {
                let mut m = format!("{code}: {message}");
                if let Some(Value::Array(vs)) = body.get("violations") {
                    for v in vs {
                        let attr = v.get("attribute").and_then(Value::as_str).unwrap_or("");
                        let msg = v.get("message").and_then(Value::as_str).unwrap_or("");
                        m.push_str(&format!("\n  {attr}: {msg}"));
                    }
                }
                Failure::User(m)
            }
        }
    }
}

fn user_err(m: impl Into<String>) -> Failure {
    Failure::User(m.into())
}

pub fn default_user() -> String {
    std::env::var("USER").unwrap_or_else(|_| "anonymous".into())
}

fn connect(cli: &Cli) -> Result<Client, Failure> {
    let user = cli.user.clone().unwrap_or_else(default_user);
    Client::connect(&cli.gateway, &user).map_err(|e| Failure::Transport(format!("{}: {e}", cli.gateway)))
}

/// Runs one parsed command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let w = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match &cli.command {
        Command::Submit { jdl, detach, key } => submit(cli, jdl, *detach, key.as_deref(), false, out),
        Command::SubmitDag { jdl } => submit(cli, jdl, true, None, true, out),
        Command::Status { job, verbose } => {
            let b = connect(cli)?.call("status", json!({ "jobId": job, "verbose": verbose }))?;
            print_status(&b, *verbose, out);
            Ok(())
        }
        Command::Query { tags, states, dests, owners } => {
            let mut preds = Vec::new();
            let mut by_tag: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for t in tags {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| user_err(format!("--tag needs NAME=VALUE, got '{t}'")))?;
                by_tag.entry(k).or_default().push(v);
            }
            for (k, vs) in by_tag {
                preds.push(json!({ "field": format!("tag:{k}"), "values": vs }));
            }
            for (field, vs) in [("state", states), ("destination", dests), ("owner", owners)] {
                if !vs.is_empty() {
                    preds.push(json!({ "field": field, "values": vs }));
                }
            }
            let b = connect(cli)?.call("query", json!({ "predicates": preds }))?;
            for j in b["jobs"].as_array().into_iter().flatten() {
                w(out, j.as_str().unwrap_or_default().to_string());
            }
            Ok(())
        }
        Command::Cancel { job } => {
            let b = connect(cli)?.call("cancel", json!({ "jobId": job }))?;
            if b["cancelled"].as_bool() == Some(true) {
                w(out, format!("{job}: cancel requested"));
            } else {
                w(out, format!("{job}: already {}", b["state"].as_str().unwrap_or("finished")));
            }
            Ok(())
        }
        Command::Output { job, dir } => {
            let mut c = connect(cli)?;
            let b = c.call("output-list", json!({ "jobId": job }))?;
            for f in b["files"].as_array().into_iter().flatten() {
                let name = f["name"].as_str().unwrap_or_default();
                let n = c.get_file(job, name, &dir.join(name))?;
                w(out, format!("{name} ({n} bytes)"));
            }
            Ok(())
        }
        Command::ChkptGet { job, seq } => {
            let b = connect(cli)?.call("get-state", json!({ "jobId": job, "seq": seq }))?;
            for p in b["pairs"].as_array().into_iter().flatten() {
                w(out, format!("{}={}", p[0].as_str().unwrap_or(""), p[1].as_str().unwrap_or("")));
            }
            Ok(())
        }
        Command::Resubmit { job, from_state } => {
            let b = connect(cli)?.call("resubmit", json!({ "jobId": job, "fromState": from_state }))?;
            w(out, format!("{job}: attempt {} requested", b["attempt"]));
            Ok(())
        }
        Command::Resources => {
            let b = connect(cli)?.call("resources", json!({}))?;
            for r in b["resources"].as_array().into_iter().flatten() {
                w(out, r.as_str().unwrap_or_default().to_string());
            }
            Ok(())
        }
        Command::Balance { account } => {
            let b = connect(cli)?.call("account-balance", json!({ "account": account }))?;
            w(out, format!("{account}: {}", b["balance"]));
            Ok(())
        }
        Command::Attach { job, timeout } => {
            let b = connect(cli)?.call("status", json!({ "jobId": job, "verbose": true }))?;
            let ad = parse_ad(b["jdl"].as_str().unwrap_or_default()).map_err(|e| user_err(e.to_string()))?;
            let port = ad
                .get_int("ListenerPort")
                .ok_or_else(|| user_err(format!("{job} is not an interactive job")))?;
            let listener = TcpListener::bind(("0.0.0.0", port as u16))
                .map_err(|e| user_err(format!("cannot listen on port {port}: {e}")))?;
            attach(listener, Duration::from_secs(*timeout))
        }
    }
}

fn attach(listener: TcpListener, timeout: Duration) -> Result<(), Failure> {
    let conn = accept_job(&listener, timeout).map_err(|e| user_err(format!("Timeout: {e}")))?;
    bridge_session(conn, std::io::stdin(), &mut std::io::stdout(), &mut std::io::stderr())
        .map_err(|e| Failure::Transport(e.to_string()))
}

fn submit(cli: &Cli, path: &Path, detach: bool, key: Option<&str>, dag: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| user_err(format!("{}: {e}", path.display())))?;
    let mut ad = parse_ad(&text).map_err(|e| user_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let files = input_manifest(&text);
    for f in &files {
        if !base.join(f).is_file() {
            return Err(user_err(format!("input sandbox file {} not found", base.join(f).display())));
        }
    }
    let interactive = ad
        .get_text("JobType")
        .is_some_and(|t| t.eq_ignore_ascii_case("interactive"));
    let listener = if interactive {
        let l = TcpListener::bind("0.0.0.0:0").map_err(|e| user_err(format!("cannot open listener: {e}")))?;
        let port = l.local_addr().map_err(|e| user_err(e.to_string()))?.port();
        ad.set_text("ListenerHost", &local_host());
        ad.set_int("ListenerPort", port as i64);
        Some(l)
    } else {
        None
    };
    let mut c = connect(cli)?;
    let cmd = if dag { "submit-dag" } else { "submit" };
    let b = c.call(cmd, json!({ "jdl": ad.to_pretty(), "requestKey": key }))?;
    let job = b["jobId"].as_str().unwrap_or_default().to_string();
    for f in &files {
        c.put_file(&job, f, &base.join(f))?;
    }
    let _ = writeln!(out, "{job}");
    let _ = out.flush();
    match listener {
        Some(l) if !detach => attach(l, Duration::from_secs(30)),
        _ => Ok(()),
    }
}

fn local_host() -> String {
    std::env::var("WMS_LISTENER_HOST").unwrap_or_else(|_| "127.0.0.1".into())
}

fn print_status(b: &Value, verbose: bool, out: &mut dyn Write) {
    let s = |k: &str| match &b[k] {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        v => v.to_string(),
    };
    let _ = writeln!(out, "{}: {}", s("jobId"), s("state"));
    let _ = writeln!(out, "  attempt:     {}", s("attempt"));
    let _ = writeln!(out, "  owner:       {}", s("owner"));
    let _ = writeln!(out, "  destination: {}", s("destination"));
    let _ = writeln!(out, "  exit code:   {}", s("exitCode"));
    if let Some(tags) = b["userTags"].as_object().filter(|t| !t.is_empty()) {
        for (k, v) in tags {
            let _ = writeln!(out, "  tag {k} = {}", v.as_str().unwrap_or_default());
        }
    }
    if verbose {
        for e in b["events"].as_array().into_iter().flatten() {
            let _ = writeln!(out, "  {} {} {} {}", e["ts"], e["src"].as_str().unwrap_or(""), e["kind"].as_str().unwrap_or(""), e["payload"]);
        }
    }
}
