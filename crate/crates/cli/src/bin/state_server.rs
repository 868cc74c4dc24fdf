//! Serves a local state file over HTTP for `-backend=http` clients.

use std::path::PathBuf;
use std::process::ExitCode;

use microform::state::server::StateServer;
use microform::state::LocalBackend;

const USAGE: &str = "usage: microform-state-server [--listen HOST:PORT] [--state FILE]";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MICROFORM_LOG", "info")).init();

    let mut listen = "127.0.0.1:8791".to_string();
    let mut state = PathBuf::from("microform.tfstate");
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) => (f.to_string(), Some(v.to_string())),
            None => (arg.clone(), None),
        };
        let Some(value) = inline.or_else(|| args.next()) else {
            eprintln!("{USAGE}");
            return ExitCode::from(1);
        };
        match flag.as_str() {
            "--listen" => listen = value,
            "--state" => state = PathBuf::from(value),
            _ => {
                eprintln!("unknown argument `{flag}`\n{USAGE}");
                return ExitCode::from(1);
            }
        }
    }

    let server = match StateServer::start(LocalBackend::new(&state), &listen) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot listen on {listen}: {e}");
            return ExitCode::from(1);
        }
    };
    log::info!("serving {} at {}", state.display(), server.url());
    if let Err(e) = ctrlc::set_handler(|| std::process::exit(0)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    server.join();
    ExitCode::SUCCESS
}
