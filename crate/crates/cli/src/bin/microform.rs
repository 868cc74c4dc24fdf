use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MICROFORM_LOG", "warn")).init();

    if let Err(e) = ctrlc::set_handler(|| {
        let released = microform_cli::release_held_locks();
        if released > 0 {
            eprintln!("\nInterrupted: released {released} state lock(s).");
        } else {
            eprintln!("\nInterrupted.");
        }
        std::process::exit(130);
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    let args: Vec<String> = std::env::args().skip(1).collect();
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::stdout();
    let mut err = io::stderr();
    let code = microform_cli::run(
        &args,
        &mut microform_cli::Streams {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    let _ = out.flush();
    ExitCode::from(code as u8)
}
