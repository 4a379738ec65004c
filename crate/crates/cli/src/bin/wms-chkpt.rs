//! In-job checkpoint helper: `wms-chkpt save k=v ...` and `wms-chkpt load`.

use std::fs;

use clap::{Parser, Subcommand};
use serde_json::json;
use wms_core::gateway::Client;

#[derive(Parser)]
#[command(name = "wms-chkpt", about = "Save or load the logical state of the running job")]
struct Args {
    #[arg(long, env = "WMS_GATEWAY", default_value = wms_cli::DEFAULT_GATEWAY)]
    gateway: String,
    #[arg(long, env = "WMS_JOB_ID")]
    job: String,
    #[arg(long, env = "WMS_OWNER", default_value = "")]
    owner: String,
    #[arg(long, env = "WMS_ATTEMPT")]
    attempt: Option<u32>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Save var=value pairs as the job's current state.
    Save { pairs: Vec<String> },
    /// Print the state to resume from, one var=value per line.
    Load,
}

fn main() {
    let args = Args::parse();
    if let Err(m) = run(&args) {
        eprintln!("wms-chkpt: {m}");
        std::process::exit(1);
    }
}

fn run(a: &Args) -> Result<(), String> {
    match &a.cmd {
        Cmd::Save { pairs } => {
            let mut kv = Vec::new();
            for p in pairs {
                let (k, v) = p.split_once('=').ok_or_else(|| format!("expected var=value, got '{p}'"))?;
                kv.push(json!([k, v]));
            }
            let mut c = Client::connect(&a.gateway, &a.owner).map_err(|e| format!("{}: {e}", a.gateway))?;
            c.call("save-state", json!({ "jobId": a.job, "pairs": kv, "attempt": a.attempt }))
                .map_err(|e| e.to_string())?;
            Ok(())
        }
        Cmd::Load => {
            if let Some(p) = std::env::var_os("WMS_CHECKPOINT_IN") {
                let text = fs::read_to_string(&p).map_err(|e| format!("restore file: {e}"))?;
                print!("{text}");
                return Ok(());
            }
            let mut c = Client::connect(&a.gateway, &a.owner).map_err(|e| format!("{}: {e}", a.gateway))?;
            match c.call("get-state", json!({ "jobId": a.job })) {
                Ok(b) => {
                    for p in b["pairs"].as_array().into_iter().flatten() {
                        println!("{}={}", p[0].as_str().unwrap_or(""), p[1].as_str().unwrap_or(""));
                    }
                    Ok(())
                }
                Err(e) if e.code() == Some("NoSuchState") => Ok(()),
                Err(e) => Err(e.to_string()),
            }
        }
    }
}
