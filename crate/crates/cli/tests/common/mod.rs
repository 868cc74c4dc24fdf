#![allow(dead_code)]

use std::path::{Path, PathBuf};

use microform::Registry;
use tempfile::TempDir;

pub struct Outcome {
    pub code: i32,
    pub out: String,
    pub err: String,
}

impl Outcome {
    /// The marker lines of a rendered plan, e.g. `+ create memcloud_vpc.main`.
    pub fn change_lines(&self) -> Vec<String> {
        self.out
            .lines()
            .filter(|l| {
                let t = l.trim_start();
                ["+ ", "~ ", "-/+ ", "- ", "<= "].iter().any(|m| t.starts_with(m))
            })
            .map(|l| l.trim_start().to_string())
            .collect()
    }

    pub fn last_line(&self) -> &str {
        self.out.lines().last().unwrap_or("")
    }
}

pub fn run_with(registry: &Registry, args: &[String], input: &str) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut input = input.as_bytes();
    let code = microform_cli::run_with_registry(
        args,
        registry,
        &mut microform_cli::Streams {
            input: &mut input,
            out: &mut out,
            err: &mut err,
        },
    );
    Outcome {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

pub fn fixture(name: &str, form: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .join(form)
}

/// A scratch working directory holding a copy of one fixture.
pub struct Workspace {
    pub dir: TempDir,
    pub extra: Vec<String>,
}

impl Workspace {
    pub fn empty() -> Workspace {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
            extra: Vec::new(),
        }
    }

    pub fn from_fixture(name: &str) -> Workspace {
        let ws = Workspace::empty();
        let src = fixture(name, "native");
        for entry in std::fs::read_dir(src).unwrap() {
            let entry = entry.unwrap();
            std::fs::copy(entry.path(), ws.dir.path().join(entry.file_name())).unwrap();
        }
        ws
    }

    /// Points every `memcloud` provider at `url`.
    pub fn with_endpoint(mut self, url: &str) -> Workspace {
        self.extra.push("-var".into());
        self.extra.push(format!("endpoint={url}"));
        self
    }

    pub fn write(&self, file: &str, text: &str) {
        std::fs::write(self.dir.path().join(file), text).unwrap();
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn args(&self, args: &[&str]) -> Vec<String> {
        let mut all = vec![format!("-chdir={}", self.dir.path().display())];
        all.extend(args.iter().map(|s| s.to_string()));
        all.extend(self.extra.iter().cloned());
        all
    }

    pub fn run(&self, args: &[&str]) -> Outcome {
        self.run_input(args, "")
    }

    pub fn run_input(&self, args: &[&str], input: &str) -> Outcome {
        run_with(&Registry::builtin(), &self.args(args), input)
    }

    pub fn state(&self) -> microform::StateSnapshot {
        let path = self.dir.path().join("microform.tfstate");
        match std::fs::read_to_string(path) {
            Ok(text) => microform::StateSnapshot::from_json_str(&text).unwrap(),
            Err(_) => microform::StateSnapshot::empty(),
        }
    }
}
