use clap::Parser;
use wms_cli::{run, Cli};

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(f) = run(&cli, &mut std::io::stdout()) {
        match &f {
            wms_cli::Failure::User(m) => eprintln!("wms: {m}"),
            wms_cli::Failure::Transport(m) => eprintln!("wms: transport error: {m}"),
        }
        std::process::exit(f.exit_code());
    }
}
