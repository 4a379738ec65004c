//! Fixtures shared by the end-to-end tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use wms_core::executor::ExecConfig;
use wms_core::spool::Spool;
use wms_core::wm::WmConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn install_fixtures(spool: &Spool) {
    let src = fixtures().join("resources");
    fs::create_dir_all(spool.resources()).unwrap();
    fs::create_dir_all(spool.accounts_file().parent().unwrap()).unwrap();
    for e in fs::read_dir(&src).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if name == "accounts.ad" {
            fs::copy(&p, spool.accounts_file()).unwrap();
        } else if name.ends_with(".ad") {
            fs::copy(&p, spool.resources().join(name)).unwrap();
        }
    }
}

pub fn exec_config() -> ExecConfig {
    ExecConfig {
        wrapper: PathBuf::from(env!("CARGO_BIN_EXE_wms-wrapper")),
        extra_path: Path::new(env!("CARGO_BIN_EXE_wms-chkpt")).parent().map(Path::to_path_buf),
        fixed_cpu_seconds: Some(1.5),
        heartbeat_every: Duration::from_millis(300),
        ..ExecConfig::default()
    }
}

pub fn wm_config() -> WmConfig {
    WmConfig {
        orphan_grace: Duration::from_millis(1500),
        retry_backoff: Duration::from_millis(200),
        stale_claim: Duration::from_secs(5),
        ..WmConfig::default()
    }
}

