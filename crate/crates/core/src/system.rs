//! Runs every service of the system in one process, one thread each, and
//! restarts a service that fails.

use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::executor::{ExecConfig, Executor, LogMonitor};
use crate::fault::Faults;
use crate::gateway::{serve_stream, Gateway};
use crate::spool::Spool;
use crate::wm::{AbortHandler, DagEngine, WmConfig, WorkloadManager};

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub spool: Spool,
    /// Gateway bind address; port 0 picks a free port.
    pub bind: String,
    pub wm: WmConfig,
    pub exec: ExecConfig,
    /// Pause between rounds when a service had nothing to do.
    pub idle_sleep: Duration,
}

impl SystemConfig {
    pub fn new(spool: Spool) -> SystemConfig {
        SystemConfig {
            spool,
            bind: format!("127.0.0.1:{}", crate::gateway::DEFAULT_PORT),
            wm: WmConfig::default(),
            exec: ExecConfig::default(),
            idle_sleep: Duration::from_millis(20),
        }
    }
}

pub struct System {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

/// Keeps one service running until `stop` is set. A failing step discards
/// the service and opens it again.
fn supervise<C, O, S>(name: &'static str, stop: Arc<AtomicBool>, idle: Duration, open: O, step: S) -> JoinHandle<()>
where
    O: Fn() -> Result<C, String> + Send + 'static,
    S: Fn(&mut C) -> Result<bool, String> + Send + 'static,
{
    thread::Builder::new()
        .name(name.into())
        .spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                let mut c = match open() {
                    Ok(c) => c,
                    Err(e) => {
                        log::error!("{name}: cannot start: {e}");
                        thread::sleep(Duration::from_secs(1));
                        continue;
                    }
                };
                while !stop.load(Ordering::Relaxed) {
                    match step(&mut c) {
                        Ok(true) => {}
                        Ok(false) => thread::sleep(idle),
                        Err(e) => {
                            log::error!("{name}: {e}; restarting");
                            thread::sleep(idle);
                            break;
                        }
                    }
                }
            }
        })
        .expect("spawn service thread")
}

/// The workload manager with its DAG engine and abort handler.
pub struct WmSide {
    pub wm: WorkloadManager,
    pub dags: DagEngine,
    pub aborts: AbortHandler,
}

impl WmSide {
    pub fn open(spool: &Spool, config: WmConfig, faults: Faults) -> Result<WmSide, String> {
        let mut wm = WorkloadManager::new(spool, config, faults.clone()).map_err(|e| e.to_string())?;
        wm.recover().map_err(|e| e.to_string())?;
        Ok(WmSide {
            wm,
            dags: DagEngine::new(spool, faults.clone()).map_err(|e| e.to_string())?,
            aborts: AbortHandler::new(spool, faults).map_err(|e| e.to_string())?,
        })
    }

    pub fn step(&mut self) -> Result<bool, String> {
        let mut busy = false;
        // drain the queue before looking at DAGs and failures
        while self.wm.step().map_err(|e| e.to_string())? {
            busy = true;
        }
        busy |= self.aborts.step().map_err(|e| e.to_string())?;
        busy |= self.dags.step().map_err(|e| e.to_string())?;
        Ok(busy)
    }
}

impl System {
    pub fn start(mut config: SystemConfig) -> std::io::Result<System> {
        std::fs::create_dir_all(config.spool.root())?;
        let listener = TcpListener::bind(&config.bind)?;
        let addr = listener.local_addr()?;
        if config.exec.gateway.is_none() {
            config.exec.gateway = Some(addr.to_string());
        }
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let gw = Gateway::open(&config.spool, Faults::none())
            .map_err(|e| std::io::Error::other(e.message))?;
        let gw = Arc::new(gw);
        let mut threads = Vec::new();

        let s = Arc::clone(&stop);
        threads.push(thread::spawn(move || {
            while !s.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((conn, _)) => {
                        let _ = conn.set_nonblocking(false);
                        let gw = Arc::clone(&gw);
                        thread::spawn(move || {
                            if let Err(e) = serve_stream(conn, &gw) {
                                log::debug!("connection closed: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        }));

        let (spool, wmc, idle) = (config.spool.clone(), config.wm.clone(), config.idle_sleep);
        threads.push(supervise(
            "wm",
            Arc::clone(&stop),
            idle,
            move || WmSide::open(&spool, wmc.clone(), Faults::none()),
            |c: &mut WmSide| c.step(),
        ));

        let (spool, exc) = (config.spool.clone(), config.exec.clone());
        threads.push(supervise(
            "executor",
            Arc::clone(&stop),
            idle,
            move || Executor::open(&spool, exc.clone(), Faults::none()).map_err(|e| e.to_string()),
            |c: &mut Executor| c.step().map_err(|e| e.to_string()),
        ));

        let spool = config.spool.clone();
        threads.push(supervise(
            "logmonitor",
            Arc::clone(&stop),
            idle,
            move || LogMonitor::open(&spool, Faults::none()).map_err(|e| e.to_string()),
            |c: &mut LogMonitor| c.step().map(|n| n > 0).map_err(|e| e.to_string()),
        ));

        Ok(System { addr, stop, threads })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Signals every service and waits for them. Running jobs are left to
    /// the next start's recovery.
    pub fn stop(self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the process is interrupted.
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}
