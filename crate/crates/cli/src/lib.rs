//! The `microform` command line: write configuration, `plan`, review,
//! `apply`.
//!
//! [`run`] takes the arguments and the three standard streams, so the whole
//! command surface can be driven in-process:
//!
//! ```
//! let dir = tempfile::tempdir().unwrap();
//! std::fs::write(
//!     dir.path().join("main.tf"),
//!     "provider \"localfs\" {}\nresource \"localfs_file\" \"a\" {\n  path = \"a.txt\"\n  content = \"x\"\n}\n",
//! ).unwrap();
//! let chdir = format!("-chdir={}", dir.path().display());
//! let (mut out, mut err) = (Vec::new(), Vec::new());
//! let mut streams = microform_cli::Streams {
//!     input: &mut std::io::empty(),
//!     out: &mut out,
//!     err: &mut err,
//! };
//! let code = microform_cli::run(&[chdir, "plan".into(), "-detailed-exitcode".into()], &mut streams);
//! assert_eq!(code, 2);
//! assert!(String::from_utf8(out).unwrap().ends_with("Plan: 1 to add, 0 to change, 0 to destroy.\n"));
//! ```

mod args;
pub mod render;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};

use microform::config::load_directory;
use microform::exec::{self, ApplyEvent, ApplyOptions, ExecError};
use microform::graph::{build_graph, detect_cycles, render_dot, reverse};
use microform::plan::{diff, diff_with_data, load_plan, plan_destroy, refresh_with_parallelism, save_plan};
use microform::provider::{ConfiguredProviders, ProviderContext};
use microform::state::{default_holder, resource_json, HttpBackend, LocalBackend, LockOperation, StateLock};
use microform::{Backend, ConfigDocument, Plan, Registry, StateSnapshot};

pub use args::{parse, parse_var_value, CliConfig, Command, StateBackend, UsageError, USAGE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHANGES: i32 = 2;

/// Where a command reads confirmations from and writes its output.
pub struct Streams<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

type Failure = String;

static HELD_LOCKS: Mutex<Vec<(Arc<dyn Backend>, String)>> = Mutex::new(Vec::new());

/// A state lock that an interrupt can release.
struct HeldLock(Option<StateLock>);

impl HeldLock {
    fn acquire(backend: Arc<dyn Backend>, op: LockOperation) -> Result<HeldLock, Failure> {
        let lock = StateLock::acquire(backend.clone(), default_holder(), op).map_err(|e| e.to_string())?;
        held_locks().push((backend, lock.token().to_string()));
        Ok(HeldLock(Some(lock)))
    }

    fn lock(&self) -> &StateLock {
        self.0.as_ref().expect("lock present until drop")
    }

    fn release(mut self) -> Result<(), Failure> {
        let lock = self.0.take().expect("lock present until drop");
        forget_lock(lock.token());
        lock.release().map_err(|e| e.to_string())
    }
}

impl Drop for HeldLock {
    fn drop(&mut self) {
        if let Some(lock) = self.0.take() {
            forget_lock(lock.token());
        }
    }
}

fn held_locks() -> std::sync::MutexGuard<'static, Vec<(Arc<dyn Backend>, String)>> {
    HELD_LOCKS.lock().unwrap_or_else(|e| e.into_inner())
}

fn forget_lock(token: &str) {
    held_locks().retain(|(_, t)| t != token);
}

/// Releases every state lock a running command holds. Called from the
/// interrupt handler before the process exits.
pub fn release_held_locks() -> usize {
    let locks: Vec<_> = held_locks().drain(..).collect();
    for (backend, token) in &locks {
        if let Err(e) = backend.unlock(token) {
            log::warn!("could not release lock on {}: {e}", backend.describe());
        }
    }
    locks.len()
}

/// Runs one command with the built-in providers. Returns the exit code.
pub fn run(args: &[String], streams: &mut Streams) -> i32 {
    run_with_registry(args, &Registry::builtin(), streams)
}

/// Runs one command with the providers in `registry`.
pub fn run_with_registry(args: &[String], registry: &Registry, streams: &mut Streams) -> i32 {
    let (cfg, command) = match args::parse(args) {
        Ok(parsed) => parsed,
        Err(UsageError(message)) if message.is_empty() => {
            let _ = write!(streams.out, "{USAGE}");
            return EXIT_OK;
        }
        Err(UsageError(message)) => {
            let _ = writeln!(streams.err, "Error: {message}\n\n{USAGE}");
            return EXIT_ERROR;
        }
    };
    let mut session = Session { cfg: &cfg, registry, io: streams };
    let result = match command {
        Command::Validate => session.validate(),
        Command::Plan { out, detailed_exitcode } => session.plan(out.as_deref(), detailed_exitcode),
        Command::Apply { plan_file } => session.apply(plan_file.as_deref()),
        Command::Destroy => session.destroy(),
        Command::Graph { destroy } => session.graph(destroy),
        Command::StateList => session.state_list(),
        Command::StateShow(addr) => session.state_show(&addr),
        Command::ForceUnlock(token) => session.force_unlock(&token),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(session.io.err, "Error: {message}");
            EXIT_ERROR
        }
    }
}

struct Session<'a, 'io> {
    cfg: &'a CliConfig,
    registry: &'a Registry,
    io: &'a mut Streams<'io>,
}

fn text<E: std::fmt::Display>(e: E) -> Failure {
    e.to_string()
}

impl Session<'_, '_> {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.cfg.working_dir.join(path)
        }
    }

    fn backend(&self) -> Arc<dyn Backend> {
        match &self.cfg.state_backend {
            StateBackend::Local(path) => Arc::new(LocalBackend::new(self.resolve(path))),
            StateBackend::Http(url) => Arc::new(HttpBackend::new(url.clone())),
        }
    }

    fn load(&self) -> Result<ConfigDocument, Failure> {
        load_directory(&self.cfg.working_dir, &self.cfg.var_overrides).map_err(text)
    }

    fn providers(&self, doc: &ConfigDocument) -> Result<ConfiguredProviders, Failure> {
        let ctx = ProviderContext {
            working_dir: self.cfg.working_dir.clone(),
        };
        self.registry.configure_all(doc, &ctx).map_err(text)
    }

    fn print(&mut self, s: &str) -> Result<(), Failure> {
        self.io.out.write_all(s.as_bytes()).map_err(text)
    }

    fn refreshed(&self, lock: &HeldLock, providers: &ConfiguredProviders) -> Result<StateSnapshot, Failure> {
        let state = lock.lock().read_state().map_err(text)?;
        if !self.cfg.refresh {
            return Ok(state);
        }
        refresh_with_parallelism(&state, providers, self.cfg.parallelism).map_err(text)
    }

    /// True when the operator typed `yes`.
    fn confirm(&mut self, question: &str) -> Result<bool, Failure> {
        if self.cfg.auto_approve {
            return Ok(true);
        }
        write!(
            self.io.out,
            "\n{question}\n  Only 'yes' will be accepted to approve.\n\n  Enter a value: "
        )
        .and_then(|_| self.io.out.flush())
        .map_err(text)?;
        let mut line = String::new();
        self.io.input.read_line(&mut line).map_err(text)?;
        self.print("\n")?;
        Ok(line.trim_end_matches(['\r', '\n']) == "yes")
    }

    fn validate(&mut self) -> Result<i32, Failure> {
        let doc = self.load()?;
        let schemas = self.registry.schemas_for(&doc).map_err(text)?;
        let graph = build_graph(&doc).map_err(text)?;
        detect_cycles(&graph).map_err(text)?;
        diff(&doc, &StateSnapshot::empty(), &schemas).map_err(text)?;
        self.print("The configuration is valid.\n")?;
        Ok(EXIT_OK)
    }

    fn plan(&mut self, out: Option<&Path>, detailed: bool) -> Result<i32, Failure> {
        let doc = self.load()?;
        let providers = self.providers(&doc)?;
        let lock = HeldLock::acquire(self.backend(), LockOperation::Plan)?;
        let state = self.refreshed(&lock, &providers)?;
        let plan = diff_with_data(&doc, &state, &providers).map_err(text)?;
        self.print(&render::plan(&plan, providers.schemas()))?;
        if let Some(path) = out {
            let path = self.resolve(path);
            save_plan(&plan, &path).map_err(text)?;
            self.print(&format!("\nSaved the plan to {}\n", path.display()))?;
        }
        lock.release()?;
        Ok(if detailed && !plan.is_noop() { EXIT_CHANGES } else { EXIT_OK })
    }

    fn apply(&mut self, plan_file: Option<&Path>) -> Result<i32, Failure> {
        let doc = self.load()?;
        let providers = self.providers(&doc)?;
        let lock = HeldLock::acquire(self.backend(), LockOperation::Apply)?;
        let plan = match plan_file {
            Some(path) => load_plan(&self.resolve(path)).map_err(text)?,
            None => {
                let state = self.refreshed(&lock, &providers)?;
                let plan = diff_with_data(&doc, &state, &providers).map_err(text)?;
                self.print(&render::plan(&plan, providers.schemas()))?;
                if !plan.is_noop() && !self.confirm("Do you want to perform these actions?")? {
                    let _ = writeln!(self.io.err, "Apply cancelled.");
                    return Ok(EXIT_ERROR);
                }
                plan
            }
        };
        let code = self.execute(&plan, &providers, &lock)?;
        lock.release()?;
        Ok(code)
    }

    fn destroy(&mut self) -> Result<i32, Failure> {
        let doc = self.load()?;
        let providers = self.providers(&doc)?;
        let lock = HeldLock::acquire(self.backend(), LockOperation::Destroy)?;
        let state = self.refreshed(&lock, &providers)?;
        let plan = plan_destroy(&state).map_err(text)?;
        self.print(&render::plan(&plan, providers.schemas()))?;
        if !plan.is_noop() && !self.confirm("Do you really want to destroy all resources?")? {
            let _ = writeln!(self.io.err, "Destroy cancelled.");
            return Ok(EXIT_ERROR);
        }
        let code = self.execute(&plan, &providers, &lock)?;
        lock.release()?;
        Ok(code)
    }

    /// Applies `plan`, streaming progress lines as changes finish.
    fn execute(&mut self, plan: &Plan, providers: &ConfiguredProviders, lock: &HeldLock) -> Result<i32, Failure> {
        let (tx, rx) = mpsc::channel::<String>();
        let opts = ApplyOptions {
            parallelism: self.cfg.parallelism,
            observer: Some(Arc::new(move |event: &ApplyEvent| {
                let _ = tx.send(event.to_string());
            })),
        };
        let state_lock = lock.lock();
        let result = std::thread::scope(|s| {
            let worker = s.spawn(move || {
                let opts = opts;
                exec::apply(plan, providers, state_lock, &opts)
            });
            for line in rx {
                let _ = writeln!(self.io.out, "{line}");
            }
            worker.join().expect("apply thread panicked")
        });
        let report = match result {
            Ok(report) => report,
            Err(ExecError::Persist { report, source }) => {
                self.print(&render::report(&report))?;
                return Err(format!("applied changes could not be saved: {source}"));
            }
            Err(e) => return Err(e.to_string()),
        };
        self.print(&render::report(&report))?;
        if report.is_success() {
            return Ok(EXIT_OK);
        }
        for (addr, message) in &report.failed {
            let _ = writeln!(self.io.err, "Error: {addr}: {message}");
        }
        Ok(EXIT_ERROR)
    }

    fn graph(&mut self, destroy: bool) -> Result<i32, Failure> {
        let doc = self.load()?;
        let graph = build_graph(&doc).map_err(text)?;
        detect_cycles(&graph).map_err(text)?;
        let graph = if destroy { reverse(&graph) } else { graph };
        self.print(&render_dot(&graph))?;
        Ok(EXIT_OK)
    }

    fn state_list(&mut self) -> Result<i32, Failure> {
        let state = self.backend().read_state().map_err(text)?;
        for addr in state.resources.keys() {
            self.print(&format!("{addr}\n"))?;
        }
        Ok(EXIT_OK)
    }

    fn state_show(&mut self, addr: &microform::ResourceAddress) -> Result<i32, Failure> {
        let state = self.backend().read_state().map_err(text)?;
        let resource = state
            .resources
            .get(addr)
            .ok_or_else(|| format!("no resource `{addr}` in state"))?;
        let json = serde_json::to_string_pretty(&resource_json(addr, resource)).map_err(text)?;
        self.print(&format!("{json}\n"))?;
        Ok(EXIT_OK)
    }

    fn force_unlock(&mut self, token: &str) -> Result<i32, Failure> {
        let backend = self.backend();
        backend.unlock(token).map_err(text)?;
        self.print(&format!("Released the state lock on {}.\n", backend.describe()))?;
        Ok(EXIT_OK)
    }
}
