//! The job wrapper: runs one attempt of a job inside a fresh scratch
//! directory on a simulated worker node.

use std::fs;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::interactive::{read_frame, write_frame, Frame, STDERR, STDOUT};
use crate::lb::LbStore;
use crate::util::atomic_write;
use crate::wm::{format_pairs, merge_states, split_node_id, WrapperPlan, AGGREGATE_EXECUTABLE};

use super::{LaunchSpec, WrapperResult};

const CONNECT_WAIT: Duration = Duration::from_secs(30);

/// Runs the launch description at `launch` and leaves `exit.json` next to
/// it. Returns the wrapper's own exit status.
pub fn run(launch: &Path) -> i32 {
    let spec: LaunchSpec = match fs::read(launch).map(|b| serde_json::from_slice(&b)) {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => {
            eprintln!("wms-wrapper: bad launch file: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("wms-wrapper: cannot read {}: {e}", launch.display());
            return 2;
        }
    };
    let pid = std::process::id().to_string();
    if let Err(e) = atomic_write(&spec.run_dir.join("wrapper.pid"), pid.as_bytes()) {
        eprintln!("wms-wrapper: cannot write pid: {e}");
        return 2;
    }
    let result = execute(&spec);
    if let Some(e) = &result.error {
        eprintln!("wms-wrapper: {e}");
    }
    let bytes = serde_json::to_vec_pretty(&result).expect("result serializes");
    match atomic_write(&spec.run_dir.join("exit.json"), &bytes) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wms-wrapper: cannot write exit record: {e}");
            2
        }
    }
}

fn failed(why: String) -> WrapperResult {
    WrapperResult {
        started: false,
        exit_code: None,
        cpu_seconds: 0.0,
        error: Some(why),
    }
}

fn copy_into(src: &Path, dst: &Path) -> std::io::Result<()> {
    if let Some(p) = dst.parent() {
        fs::create_dir_all(p)?;
    }
    fs::copy(src, dst).map(|_| ())
}

fn execute(spec: &LaunchSpec) -> WrapperResult {
    let plan = &spec.plan;
    let scratch = &spec.scratch;
    if plan.fresh_scratch {
        let _ = fs::remove_dir_all(scratch);
    }
    if let Err(e) = fs::create_dir_all(scratch) {
        return failed(format!("cannot create scratch: {e}"));
    }
    for name in &plan.input_sandbox {
        if let Err(e) = copy_into(&plan.input_dir.join(name), &scratch.join(name)) {
            return failed(format!("input sandbox copy failed for {name}: {e}"));
        }
    }
    let started_marker = spec.run_dir.join("started");
    let begin = Instant::now();
    let exit_code = if plan.executable == AGGREGATE_EXECUTABLE {
        let _ = atomic_write(&started_marker, b"");
        aggregate(spec)
    } else {
        let Some(exe) = resolve_executable(plan, scratch) else {
            return failed(format!("executable not found: {}", plan.executable));
        };
        match run_user(spec, &exe, &started_marker) {
            Ok(status) => exit_code_of(status),
            Err(e) => return failed(e),
        }
    };
    let cpu_seconds = begin.elapsed().as_secs_f64();
    let mut error = None;
    for name in &plan.output_sandbox {
        let src = scratch.join(name);
        if !src.is_file() {
            continue;
        }
        if let Err(e) = copy_into(&src, &plan.output_dir.join(name)) {
            error = Some(format!("output sandbox copy failed for {name}: {e}"));
        }
    }
    WrapperResult {
        started: true,
        exit_code: Some(exit_code),
        cpu_seconds,
        error,
    }
}

/// Death by signal `n` reports `128 + n`.
pub fn exit_code_of(status: ExitStatus) -> i32 {
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(1)
}

fn resolve_executable(plan: &WrapperPlan, scratch: &Path) -> Option<PathBuf> {
    let exe = &plan.executable;
    let p = Path::new(exe);
    if p.is_absolute() {
        return p.is_file().then(|| p.to_path_buf());
    }
    let local = scratch.join(p);
    if local.is_file() {
        return Some(local);
    }
    if exe.contains('/') {
        return None;
    }
    let path = plan.env.get("PATH").cloned().or_else(|| std::env::var("PATH").ok())?;
    std::env::split_paths(&path).map(|d| d.join(exe)).find(|c| c.is_file())
}

fn stdio_file(scratch: &Path, name: &Option<String>, write: bool) -> std::io::Result<Stdio> {
    match name {
        None => Ok(Stdio::null()),
        Some(n) if write => {
            let p = scratch.join(n);
            if let Some(d) = p.parent() {
                fs::create_dir_all(d)?;
            }
            Ok(fs::File::create(p)?.into())
        }
        Some(n) => Ok(fs::File::open(scratch.join(n))?.into()),
    }
}

fn run_user(spec: &LaunchSpec, exe: &Path, started: &Path) -> Result<ExitStatus, String> {
    let plan = &spec.plan;
    let scratch = &spec.scratch;
    let mut cmd = Command::new(exe);
    cmd.args(&plan.arguments)
        .current_dir(scratch)
        .envs(&plan.env)
        .env("WMS_SCRATCH", scratch);
    let stream = plan.listener.as_ref().and_then(|l| connect(&l.host, l.port));
    if plan.listener.is_some() && stream.is_none() {
        eprintln!("wms-wrapper: listener unreachable, running detached");
    }
    if stream.is_some() {
        cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    } else {
        let io = |n: &Option<String>, w: bool| {
            stdio_file(scratch, n, w).map_err(|e| format!("cannot open standard stream {n:?}: {e}"))
        };
        cmd.stdin(io(&plan.std_input, false)?)
            .stdout(io(&plan.std_output, true)?)
            .stderr(io(&plan.std_error, true)?);
    }
    let mut child = cmd.spawn().map_err(|e| format!("cannot start {}: {e}", exe.display()))?;
    let _ = atomic_write(started, b"");
    match stream {
        Some(s) => bridge(&mut child, s),
        None => child.wait().map_err(|e| e.to_string()),
    }
}

fn connect(host: &str, port: u16) -> Option<TcpStream> {
    let deadline = Instant::now() + CONNECT_WAIT;
    loop {
        match TcpStream::connect((host, port)) {
            Ok(s) => return Some(s),
            Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(100)),
            Err(_) => return None,
        }
    }
}

/// Carries the job's standard streams over the framed connection until the
/// job exits.
fn bridge(child: &mut Child, stream: TcpStream) -> Result<ExitStatus, String> {
    let writer = Arc::new(Mutex::new(stream.try_clone().map_err(|e| e.to_string())?));
    let mut pumps = Vec::new();
    let outputs: [(u8, Option<Box<dyn Read + Send>>); 2] = [
        (STDOUT, child.stdout.take().map(|r| Box::new(r) as Box<dyn Read + Send>)),
        (STDERR, child.stderr.take().map(|r| Box::new(r) as Box<dyn Read + Send>)),
    ];
    for (id, reader) in outputs {
        let Some(mut reader) = reader else { continue };
        let w = Arc::clone(&writer);
        pumps.push(thread::spawn(move || {
            let mut buf = vec![0u8; 8192];
            loop {
                let n = match reader.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                let mut s = w.lock().unwrap();
                if write_frame(&mut *s, &Frame::data(id, &buf[..n])).is_err() {
                    return;
                }
            }
            let _ = write_frame(&mut *w.lock().unwrap(), &Frame::eof(id));
        }));
    }
    let stdin = child.stdin.take();
    let mut input = stream;
    thread::spawn(move || {
        let mut stdin = stdin;
        while let Ok(Some(f)) = read_frame(&mut input) {
            if f.is_eof() {
                break;
            }
            let Some(w) = stdin.as_mut() else { break };
            if w.write_all(&f.payload).and_then(|_| w.flush()).is_err() {
                break;
            }
        }
        drop(stdin);
    });
    let status = child.wait().map_err(|e| e.to_string())?;
    for p in pumps {
        let _ = p.join();
    }
    let _ = writer.lock().unwrap().shutdown(std::net::Shutdown::Write);
    Ok(status)
}

/// Built-in aggregator of a partitioned job: merges the sub-jobs' final
/// states and saves the result as this job's state.
fn aggregate(spec: &LaunchSpec) -> i32 {
    let plan = &spec.plan;
    let lb = match LbStore::open(&plan.lb_root) {
        Ok(lb) => lb,
        Err(e) => {
            eprintln!("wms-wrapper: aggregator cannot open bookkeeping: {e}");
            return 1;
        }
    };
    let pairs = match merge_states(&lb, &plan.aggregate_from) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("wms-wrapper: aggregation failed: {e}");
            return 1;
        }
    };
    if let Err(e) = lb.save_state(&spec.job_id, &pairs, Some(spec.attempt)) {
        eprintln!("wms-wrapper: cannot save merged state: {e}");
        return 1;
    }
    // the partitioned job as a whole carries the merged state too
    if let Some((parent, _)) = split_node_id(&spec.job_id) {
        if let Err(e) = lb.save_state(parent, &pairs, None) {
            eprintln!("wms-wrapper: cannot save merged state on {parent}: {e}");
            return 1;
        }
    }
    if let Some(out) = &plan.std_output {
        let _ = fs::write(spec.scratch.join(out), format_pairs(&pairs));
    }
    0
}
