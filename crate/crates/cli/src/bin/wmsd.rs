//! Runs the gateway, workload manager, executor and log monitor.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Parser;
use wms_core::spool::Spool;
use wms_core::system::{System, SystemConfig};

#[derive(Parser)]
#[command(name = "wmsd", about = "Workload management daemon")]
struct Args {
    #[arg(long, env = "WMS_SPOOL", default_value = "spool")]
    spool: PathBuf,
    #[arg(long, env = "WMS_GATEWAY_PORT", default_value_t = wms_core::gateway::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Copy resource ads and accounts.ad from this directory into the spool.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Broker selection strategy: best or fuzzy.
    #[arg(long, default_value = "best")]
    strategy: String,
    /// Path of the job wrapper; defaults to the one next to this program.
    #[arg(long)]
    wrapper: Option<PathBuf>,
}

fn install_fixtures(from: &Path, spool: &Spool) -> anyhow::Result<()> {
    fs::create_dir_all(spool.resources())?;
    for e in fs::read_dir(from).with_context(|| format!("reading {}", from.display()))? {
        let p = e?.path();
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
        if name == "accounts.ad" {
            fs::create_dir_all(spool.accounts_file().parent().unwrap())?;
            fs::copy(&p, spool.accounts_file())?;
        } else if name.ends_with(".ad") {
            fs::copy(&p, spool.resources().join(name))?;
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let spool = Spool::new(&args.spool);
    if let Some(dir) = &args.init_from {
        install_fixtures(dir, &spool)?;
    }
    let bin_dir = std::env::current_exe()?.parent().map(Path::to_path_buf);
    let mut cfg = SystemConfig::new(spool);
    cfg.bind = format!("{}:{}", args.bind, args.port);
    cfg.wm.strategy = args.strategy;
    cfg.exec.wrapper = match (args.wrapper, &bin_dir) {
        (Some(w), _) => w,
        (None, Some(d)) => d.join("wms-wrapper"),
        (None, None) => PathBuf::from("wms-wrapper"),
    };
    cfg.exec.extra_path = bin_dir;
    let sys = System::start(cfg.clone()).context("starting services")?;
    let addr = sys.addr();
    log::info!("gateway listening on {addr}, spool {}", cfg.spool.root().display());
    sys.wait();
    Ok(())
}
