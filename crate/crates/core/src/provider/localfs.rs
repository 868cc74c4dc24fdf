//! Files and directories under a root directory.
//!
//! ```text
//! provider "localfs" { root = "out" }     # relative to the working directory
//!
//! resource "localfs_file" "motd" {        # id = path
//!   path    = "etc/motd"                  # forces replacement when changed
//!   content = "hello"
//! }                                       # computed: checksum (hex SHA-256)
//!
//! resource "localfs_dir" "logs" { path = "logs" }
//!
//! data "localfs_file" "seed" { path = "seed.txt" }   # content, checksum
//! ```

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{
    AttributeSpec, Created, Provider, ProviderContext, ProviderError, ProviderSchema, ValueKind,
};
use crate::value::{Attributes, Value};

pub struct LocalFs {
    root: PathBuf,
}

impl LocalFs {
    /// Unconfigured; the root is the process working directory until
    /// `configure` runs.
    pub fn new() -> Self {
        LocalFs {
            root: PathBuf::from("."),
        }
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf, ProviderError> {
        let path = Path::new(rel);
        if rel.is_empty() {
            return Err(ProviderError::invalid("path", "must not be empty"));
        }
        if path.is_absolute() {
            return Err(ProviderError::invalid("path", format!("`{rel}` escapes the root (absolute path)")));
        }
        for c in path.components() {
            match c {
                Component::Normal(_) | Component::CurDir => {}
                _ => {
                    return Err(ProviderError::invalid("path", format!("`{rel}` escapes the root")));
                }
            }
        }
        Ok(self.root.join(path))
    }
}

impl Default for LocalFs {
    fn default() -> Self {
        LocalFs::new()
    }
}

pub fn checksum(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

fn io_error(path: &Path, e: std::io::Error) -> ProviderError {
    match e.kind() {
        ErrorKind::PermissionDenied => ProviderError::Other(format!("{}: permission denied", path.display())),
        _ => ProviderError::Other(format!("{}: {e}", path.display())),
    }
}

fn string_attr<'a>(attrs: &'a Attributes, name: &str) -> Result<&'a str, ProviderError> {
    attrs
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::invalid(name, "expected a string"))
}

fn file_attrs(path: &str, content: &str) -> Attributes {
    Attributes::from([
        ("id".to_string(), Value::from(path)),
        ("path".to_string(), Value::from(path)),
        ("content".to_string(), Value::from(content)),
        ("checksum".to_string(), Value::from(checksum(content))),
    ])
}

fn dir_attrs(path: &str) -> Attributes {
    Attributes::from([
        ("id".to_string(), Value::from(path)),
        ("path".to_string(), Value::from(path)),
    ])
}

impl Provider for LocalFs {
    fn schema(&self) -> ProviderSchema {
        ProviderSchema {
            provider_name: "localfs".to_string(),
            config_attrs: vec![AttributeSpec::optional("root", ValueKind::String)],
            resource_types: BTreeMap::from([
                (
                    "localfs_file".to_string(),
                    vec![
                        AttributeSpec::required("path", ValueKind::String).force_new(),
                        AttributeSpec::required("content", ValueKind::String),
                        AttributeSpec::computed("checksum", ValueKind::String),
                        AttributeSpec::computed("id", ValueKind::String),
                    ],
                ),
                (
                    "localfs_dir".to_string(),
                    vec![
                        AttributeSpec::required("path", ValueKind::String).force_new(),
                        AttributeSpec::computed("id", ValueKind::String),
                    ],
                ),
            ]),
            data_types: BTreeMap::from([(
                "localfs_file".to_string(),
                vec![
                    AttributeSpec::required("path", ValueKind::String),
                    AttributeSpec::computed("content", ValueKind::String),
                    AttributeSpec::computed("checksum", ValueKind::String),
                    AttributeSpec::computed("id", ValueKind::String),
                ],
            )]),
        }
    }

    fn configure(&mut self, config: &Attributes, ctx: &ProviderContext) -> Result<(), ProviderError> {
        let root = match config.get("root") {
            Some(v) => v.as_str().ok_or_else(|| ProviderError::Configure {
                provider: "localfs".into(),
                message: "root must be a string".into(),
            })?,
            None => ".",
        };
        self.root = ctx.working_dir.join(root);
        Ok(())
    }

    fn create(&self, type_name: &str, attrs: &Attributes) -> Result<Created, ProviderError> {
        let rel = string_attr(attrs, "path")?;
        let full = self.resolve(rel)?;
        match type_name {
            "localfs_file" => {
                let content = string_attr(attrs, "content")?;
                if let Some(parent) = full.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
                }
                std::fs::write(&full, content).map_err(|e| io_error(&full, e))?;
                Ok(Created {
                    id: rel.to_string(),
                    attributes: file_attrs(rel, content),
                })
            }
            "localfs_dir" => {
                std::fs::create_dir_all(&full).map_err(|e| io_error(&full, e))?;
                Ok(Created {
                    id: rel.to_string(),
                    attributes: dir_attrs(rel),
                })
            }
            other => Err(ProviderError::UnsupportedType(other.to_string())),
        }
    }

    fn read(&self, type_name: &str, id: &str) -> Result<Option<Attributes>, ProviderError> {
        let full = self.resolve(id)?;
        match type_name {
            "localfs_file" => match std::fs::read(&full) {
                Ok(bytes) => {
                    let content = String::from_utf8(bytes).map_err(|_| {
                        ProviderError::Other(format!("{}: not valid UTF-8", full.display()))
                    })?;
                    Ok(Some(file_attrs(id, &content)))
                }
                Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
                Err(e) => Err(io_error(&full, e)),
            },
            "localfs_dir" => Ok(full.is_dir().then(|| dir_attrs(id))),
            other => Err(ProviderError::UnsupportedType(other.to_string())),
        }
    }

    fn update(&self, type_name: &str, id: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        if let Some(path) = attrs.get("path") {
            if path.as_str() != Some(id) {
                return Err(ProviderError::invalid("path", "cannot change in place"));
            }
        }
        match type_name {
            "localfs_file" => {
                let full = self.resolve(id)?;
                let content = string_attr(attrs, "content")?;
                std::fs::write(&full, content).map_err(|e| io_error(&full, e))?;
                Ok(file_attrs(id, content))
            }
            "localfs_dir" => self
                .read(type_name, id)?
                .ok_or_else(|| ProviderError::NotFound(id.to_string())),
            other => Err(ProviderError::UnsupportedType(other.to_string())),
        }
    }

    fn delete(&self, type_name: &str, id: &str) -> Result<(), ProviderError> {
        let full = self.resolve(id)?;
        let result = match type_name {
            "localfs_file" => std::fs::remove_file(&full),
            "localfs_dir" => std::fs::remove_dir(&full),
            other => return Err(ProviderError::UnsupportedType(other.to_string())),
        };
        match result {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
            Err(e) if e.kind() == ErrorKind::DirectoryNotEmpty => {
                Err(ProviderError::Conflict(format!("directory `{id}` is not empty")))
            }
            Err(e) => Err(io_error(&full, e)),
        }
    }

    fn read_data(&self, type_name: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        if type_name != "localfs_file" {
            return Err(ProviderError::UnsupportedType(type_name.to_string()));
        }
        let rel = string_attr(attrs, "path")?;
        self.read(type_name, rel)?
            .ok_or_else(|| ProviderError::NotFound(rel.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provider(dir: &Path) -> LocalFs {
        let mut p = LocalFs::new();
        p.configure(
            &Attributes::new(),
            &ProviderContext {
                working_dir: dir.to_path_buf(),
            },
        )
        .unwrap();
        p
    }

    fn file(path: &str, content: &str) -> Attributes {
        Attributes::from([
            ("path".to_string(), Value::from(path)),
            ("content".to_string(), Value::from(content)),
        ])
    }

    #[test]
    fn checksum_is_sha256_hex() {
        assert_eq!(
            checksum("hi"),
            "8f434346648f6b96df89dda901c5176b10a6d83961dd3c1ac88b59b2dc327aa4"
        );
    }

    #[test]
    fn file_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let p = provider(dir.path());
        let c = p.create("localfs_file", &file("motd", "hi")).unwrap();
        assert_eq!(c.id, "motd");
        assert_eq!(c.attributes["checksum"], Value::from(checksum("hi")));
        assert_eq!(p.read("localfs_file", "motd").unwrap(), Some(c.attributes.clone()));

        let u = p.update("localfs_file", "motd", &file("motd", "yo")).unwrap();
        assert_eq!(u["id"], Value::from("motd"));
        assert_ne!(u["checksum"], c.attributes["checksum"]);

        std::fs::remove_file(dir.path().join("motd")).unwrap();
        assert_eq!(p.read("localfs_file", "motd").unwrap(), None);
        p.delete("localfs_file", "motd").unwrap();
    }

    #[test]
    fn paths_stay_under_root() {
        let dir = tempfile::tempdir().unwrap();
        let p = provider(dir.path());
        for bad in ["../x", "/etc/passwd", "a/../../b", ""] {
            assert!(
                matches!(p.create("localfs_file", &file(bad, "x")), Err(ProviderError::Validation(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn path_change_rejected_by_update() {
        let dir = tempfile::tempdir().unwrap();
        let p = provider(dir.path());
        p.create("localfs_file", &file("a", "x")).unwrap();
        assert!(p.update("localfs_file", "a", &file("b", "x")).is_err());
    }

    #[test]
    fn directories_and_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = provider(dir.path());
        let attrs = Attributes::from([("path".to_string(), Value::from("logs"))]);
        p.create("localfs_dir", &attrs).unwrap();
        p.create("localfs_file", &file("logs/a", "x")).unwrap();
        assert!(matches!(p.delete("localfs_dir", "logs"), Err(ProviderError::Conflict(_))));
        let data = p
            .read_data("localfs_file", &Attributes::from([("path".to_string(), Value::from("logs/a"))]))
            .unwrap();
        assert_eq!(data["content"], Value::from("x"));
    }
}
