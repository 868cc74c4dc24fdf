use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use mockcloud::Cloud;

const USAGE: &str = "usage: mockcloud [--listen HOST:PORT] [--snapshot FILE]";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let mut listen = "127.0.0.1:8790".to_string();
    let mut snapshot: Option<PathBuf> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) => (f.to_string(), Some(v.to_string())),
            None => (arg.clone(), None),
        };
        let mut value = || inline.clone().or_else(|| args.next());
        match flag.as_str() {
            "--listen" => match value() {
                Some(v) => listen = v,
                None => return usage_error("--listen needs a value"),
            },
            "--snapshot" => match value() {
                Some(v) => snapshot = Some(PathBuf::from(v)),
                None => return usage_error("--snapshot needs a value"),
            },
            "-h" | "--help" => {
                println!("{USAGE}");
                return ExitCode::SUCCESS;
            }
            other => return usage_error(&format!("unknown argument `{other}`")),
        }
    }

    let cloud = Arc::new(Cloud::new());
    if let Some(path) = &snapshot {
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let restored = serde_json::from_str(&text)
                    .map_err(|e| e.to_string())
                    .and_then(|json| cloud.restore(&json));
                if let Err(e) = restored {
                    eprintln!("mockcloud: cannot load snapshot {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
                log::info!("loaded snapshot {}", path.display());
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                eprintln!("mockcloud: cannot read snapshot {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        }
    }

    let server = match mockcloud::serve(cloud.clone(), &listen) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mockcloud: cannot listen on {listen}: {e}");
            return ExitCode::FAILURE;
        }
    };
    log::info!("listening on {}", server.url());

    let (tx, rx) = std::sync::mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("mockcloud: cannot install signal handler: {e}");
        return ExitCode::FAILURE;
    }
    let _ = rx.recv();
    server.stop();

    if let Some(path) = &snapshot {
        let text = serde_json::to_string_pretty(&cloud.snapshot()).expect("snapshot serializes");
        if let Err(e) = std::fs::write(path, text + "\n") {
            eprintln!("mockcloud: cannot write snapshot {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
        log::info!("saved snapshot {}", path.display());
    }
    ExitCode::SUCCESS
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("mockcloud: {message}\n{USAGE}");
    ExitCode::from(2)
}
