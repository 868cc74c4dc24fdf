use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use microform::{ResourceAddress, Value};

pub const USAGE: &str = "\
usage: microform [global flags] <command> [flags] [args]

commands:
  validate               check configuration syntax, schemas and references
  plan                   show the changes apply would make
  apply [PLANFILE]       apply a saved plan, or plan and confirm
  destroy                delete every resource recorded in state
  graph                  print the dependency graph in DOT format
  state list             list resource addresses in state
  state show ADDRESS     print one resource as JSON
  force-unlock TOKEN     remove a stale state lock

flags:
  -chdir=DIR             configuration directory (default: .)
  -state=FILE            local state file (default: microform.tfstate)
  -backend=http -backend-url=URL
                         use a remote state server
  -var NAME=VALUE        set a variable (repeatable)
  -refresh=BOOL          refresh state before planning (default: true)
  -parallelism=N         concurrent provider operations (default: 10)
  -auto-approve          skip the confirmation prompt
  -out=FILE              plan: save the plan
  -detailed-exitcode     plan: exit 2 when there are changes
  -destroy               graph: show destroy order
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateBackend {
    Local(PathBuf),
    Http(String),
}

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub working_dir: PathBuf,
    pub state_backend: StateBackend,
    pub var_overrides: BTreeMap<String, Value>,
    pub parallelism: usize,
    pub refresh: bool,
    pub auto_approve: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Validate,
    Plan { out: Option<PathBuf>, detailed_exitcode: bool },
    Apply { plan_file: Option<PathBuf> },
    Destroy,
    Graph { destroy: bool },
    StateList,
    StateShow(ResourceAddress),
    ForceUnlock(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(message: impl Into<String>) -> UsageError {
    UsageError(message.into())
}

/// `true`/`false` become booleans, integers and floats become numbers,
/// everything else stays a string.
pub fn parse_var_value(text: &str) -> Value {
    match text {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(i) = text.parse::<i64>() {
        return Value::Int(i);
    }
    let numeric = text.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-');
    match text.parse::<f64>() {
        Ok(x) if numeric && x.is_finite() => Value::Float(x),
        _ => Value::String(text.to_string()),
    }
}

fn parse_bool(flag: &str, text: &str) -> Result<bool, UsageError> {
    match text {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(usage(format!("{flag} expects true or false, got `{text}`"))),
    }
}

/// Parses the arguments after the program name.
pub fn parse(args: &[String]) -> Result<(CliConfig, Command), UsageError> {
    let mut working_dir = PathBuf::from(".");
    let mut state_file: Option<PathBuf> = None;
    let mut backend_kind: Option<String> = None;
    let mut backend_url: Option<String> = None;
    let mut vars = BTreeMap::new();
    let mut parallelism = 10;
    let mut refresh = true;
    let mut auto_approve = false;
    let mut out = None;
    let mut detailed_exitcode = false;
    let mut graph_destroy = false;
    let mut positional = Vec::new();

    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        if !arg.starts_with('-') || arg == "-" {
            positional.push(arg.clone());
            continue;
        }
        let trimmed = arg.trim_start_matches('-');
        let (name, inline) = match trimmed.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (trimmed, None),
        };
        let mut value = |what: &str| -> Result<String, UsageError> {
            inline
                .clone()
                .or_else(|| iter.next().cloned())
                .ok_or_else(|| usage(format!("-{name} needs {what}")))
        };
        match name {
            "chdir" => working_dir = PathBuf::from(value("a directory")?),
            "state" => state_file = Some(PathBuf::from(value("a file")?)),
            "backend" => backend_kind = Some(value("a backend kind")?),
            "backend-url" => backend_url = Some(value("a URL")?),
            "var" => {
                let pair = value("NAME=VALUE")?;
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| usage(format!("-var expects NAME=VALUE, got `{pair}`")))?;
                vars.insert(k.to_string(), parse_var_value(v));
            }
            "refresh" => refresh = parse_bool("-refresh", &inline.clone().unwrap_or_else(|| "true".into()))?,
            "parallelism" => {
                let text = value("a number")?;
                parallelism = match text.parse::<usize>() {
                    Ok(n) if n >= 1 => n,
                    _ => return Err(usage(format!("-parallelism must be a positive integer, got `{text}`"))),
                };
            }
            "auto-approve" => auto_approve = true,
            "out" => out = Some(PathBuf::from(value("a file")?)),
            "detailed-exitcode" => detailed_exitcode = true,
            "destroy" => graph_destroy = true,
            "h" | "help" => return Err(usage("")),
            _ => return Err(usage(format!("unknown flag `{arg}`"))),
        }
    }

    let state_backend = match (backend_kind.as_deref(), state_file, backend_url) {
        (Some("http"), None, Some(url)) => StateBackend::Http(url),
        (Some("http"), Some(_), _) => return Err(usage("-state cannot be combined with -backend=http")),
        (Some("http"), None, None) => return Err(usage("-backend=http needs -backend-url=URL")),
        (None | Some("local"), file, None) => {
            StateBackend::Local(file.unwrap_or_else(|| PathBuf::from("microform.tfstate")))
        }
        (None | Some("local"), _, Some(_)) => return Err(usage("-backend-url needs -backend=http")),
        (Some(other), _, _) => return Err(usage(format!("unknown backend `{other}`"))),
    };

    let mut words = positional.into_iter();
    let command = match words.next().as_deref() {
        Some("validate") => Command::Validate,
        Some("plan") => Command::Plan { out, detailed_exitcode },
        Some("apply") => Command::Apply { plan_file: words.next().map(PathBuf::from) },
        Some("destroy") => Command::Destroy,
        Some("graph") => Command::Graph { destroy: graph_destroy },
        Some("state") => match words.next().as_deref() {
            Some("list") => Command::StateList,
            Some("show") => {
                let text = words.next().ok_or_else(|| usage("state show needs an address"))?;
                Command::StateShow(text.parse().map_err(|e| usage(format!("{e}")))?)
            }
            other => return Err(usage(format!("unknown state subcommand `{}`", other.unwrap_or("")))),
        },
        Some("force-unlock") => {
            Command::ForceUnlock(words.next().ok_or_else(|| usage("force-unlock needs a lock token"))?)
        }
        Some(other) => return Err(usage(format!("unknown command `{other}`"))),
        None => return Err(usage("no command given")),
    };
    if let Some(extra) = words.next() {
        return Err(usage(format!("unexpected argument `{extra}`")));
    }

    Ok((
        CliConfig {
            working_dir,
            state_backend,
            var_overrides: vars,
            parallelism,
            refresh,
            auto_approve,
        },
        command,
    ))
}
