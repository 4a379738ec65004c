//! Runs one job attempt from a launch file written by the executor.

fn main() {
    let Some(path) = std::env::args_os().nth(1) else {
        eprintln!("usage: wms-wrapper <launch.json>");
        std::process::exit(2);
    };
    std::process::exit(wms_core::executor::wrapper::run(std::path::Path::new(&path)));
}
