//! The configuration language: lexing, parsing, the JSON form, directory
//! loading and expression evaluation.

mod ast;
pub mod eval;
pub mod format;
pub mod json;
pub mod lexer;
pub mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use ast::{
    Attribute, Block, BlockKind, Expression, Literal, Reference, SourceSpan, TemplatePart,
};
pub use eval::{evaluate, residual, EvalContext, EvalError};
pub use format::{format_blocks, format_expression};
pub use json::{load_json, to_json};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{parse, parse_expression, parse_source};

use crate::address::{provider_prefix, ResourceAddress};
use crate::value::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{span}: {message}")]
    Syntax { span: SourceSpan, message: String },
    #[error("{span}: {message}")]
    Invalid { span: SourceSpan, message: String },
    #[error("duplicate resource `{address}`: declared at {first} and again at {second}")]
    DuplicateResource {
        address: String,
        first: SourceSpan,
        second: SourceSpan,
    },
    #[error("{span}: undefined variable `var.{name}` (no default and no override)")]
    UndefinedVariable { name: String, span: SourceSpan },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ConfigError {
    /// Where the problem is, when it can be pinned to a position.
    pub fn span(&self) -> Option<&SourceSpan> {
        match self {
            ConfigError::Syntax { span, .. }
            | ConfigError::Invalid { span, .. }
            | ConfigError::UndefinedVariable { span, .. } => Some(span),
            ConfigError::DuplicateResource { second, .. } => Some(second),
            ConfigError::Io { .. } => None,
        }
    }
}

/// Parses inline native-syntax text.
pub fn load_str(source: &str) -> Result<Vec<Block>, ConfigError> {
    parse_source(source, Path::new("<inline>"))
}

/// The merged, validated configuration of one directory: the desired state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub blocks: Vec<Block>,
    /// Relative path and hex SHA-256 of every file that contributed.
    pub source_files: Vec<(PathBuf, String)>,
    /// Variable values after defaults and overrides.
    pub variables: BTreeMap<String, Value>,
}

impl ConfigDocument {
    /// Merges and validates blocks that did not come from files.
    pub fn from_blocks(
        blocks: Vec<Block>,
        var_overrides: BTreeMap<String, Value>,
    ) -> Result<Self, ConfigError> {
        assemble(blocks, Vec::new(), &var_overrides)
    }

    pub fn empty() -> Self {
        ConfigDocument {
            blocks: Vec::new(),
            source_files: Vec::new(),
            variables: BTreeMap::new(),
        }
    }

    /// Resource and data blocks with their addresses, in document order.
    pub fn resources(&self) -> impl Iterator<Item = (ResourceAddress, &Block)> {
        self.blocks.iter().filter_map(|b| {
            let addr = match b.kind {
                BlockKind::Resource => ResourceAddress::managed(&b.labels[0], &b.labels[1]),
                BlockKind::Data => ResourceAddress::data(&b.labels[0], &b.labels[1]),
                _ => return None,
            };
            Some((addr, b))
        })
    }

    pub fn resource(&self, address: &ResourceAddress) -> Option<&Block> {
        self.resources()
            .find(|(a, _)| a == address)
            .map(|(_, block)| block)
    }

    pub fn provider_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Provider)
    }

    pub fn provider_block(&self, name: &str) -> Option<&Block> {
        self.provider_blocks().find(|b| b.labels[0] == name)
    }

    pub fn provider_names(&self) -> BTreeSet<String> {
        self.provider_blocks().map(|b| b.labels[0].clone()).collect()
    }

    pub fn eval_context(&self) -> EvalContext {
        EvalContext::new(self.variables.clone())
    }
}

/// Loads every `.tf` and `.tf.json` file under `root`, recursively, merging
/// them in lexicographic order of their relative paths.
pub fn load_directory(
    root: &Path,
    var_overrides: &BTreeMap<String, Value>,
) -> Result<ConfigDocument, ConfigError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| ConfigError::Io {
            path: e.path().unwrap_or(root).to_path_buf(),
            source: e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        let is_native = name.ends_with(".tf");
        let is_json = name.ends_with(".tf.json");
        if !is_native && !is_json {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_path_buf();
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.push((key, rel, entry.path().to_path_buf(), is_json));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut blocks = Vec::new();
    let mut sources = Vec::new();
    for (_, rel, full, is_json) in files {
        let bytes = std::fs::read(&full).map_err(|source| ConfigError::Io {
            path: full.clone(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|_| ConfigError::Io {
            path: full.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, "not valid UTF-8"),
        })?;
        let parsed = if is_json {
            load_json(&text, &rel)?
        } else {
            parse_source(&text, &rel)?
        };
        sources.push((rel, hex::encode(Sha256::digest(text.as_bytes()))));
        blocks.extend(parsed);
    }
    assemble(blocks, sources, var_overrides)
}

fn assemble(
    blocks: Vec<Block>,
    source_files: Vec<(PathBuf, String)>,
    var_overrides: &BTreeMap<String, Value>,
) -> Result<ConfigDocument, ConfigError> {
    let mut merged: Vec<Block> = Vec::new();
    for block in blocks {
        let existing = merged
            .iter_mut()
            .find(|b| b.kind == block.kind && b.labels == block.labels);
        match (block.kind.clone(), existing) {
            (_, None) => merged.push(block),
            (BlockKind::Provider | BlockKind::Terraform, Some(prev)) => {
                for attr in block.body {
                    match prev.body.iter_mut().find(|a| a.name == attr.name) {
                        Some(slot) => *slot = attr,
                        None => prev.body.push(attr),
                    }
                }
                prev.nested_blocks.extend(block.nested_blocks);
            }
            (BlockKind::Resource | BlockKind::Data, Some(prev)) => {
                let address = if block.kind == BlockKind::Data {
                    ResourceAddress::data(&block.labels[0], &block.labels[1])
                } else {
                    ResourceAddress::managed(&block.labels[0], &block.labels[1])
                };
                return Err(ConfigError::DuplicateResource {
                    address: address.to_string(),
                    first: prev.span.clone(),
                    second: block.span,
                });
            }
            (kind, Some(prev)) => {
                return Err(ConfigError::Invalid {
                    span: block.span,
                    message: format!(
                        "duplicate {kind} `{}` (first declared at {})",
                        block.labels.join("."),
                        prev.span
                    ),
                });
            }
        }
    }

    let providers: BTreeSet<&str> = merged
        .iter()
        .filter(|b| b.kind == BlockKind::Provider)
        .map(|b| b.labels[0].as_str())
        .collect();
    for block in &merged {
        if matches!(block.kind, BlockKind::Resource | BlockKind::Data) {
            let prefix = provider_prefix(&block.labels[0]);
            if !providers.contains(prefix) {
                return Err(ConfigError::Invalid {
                    span: block.span.clone(),
                    message: format!(
                        "{} type `{}` needs a `provider \"{prefix}\"` block",
                        block.kind, block.labels[0]
                    ),
                });
            }
        }
    }

    let mut variables = BTreeMap::new();
    for block in merged.iter().filter(|b| b.kind == BlockKind::Variable) {
        let name = &block.labels[0];
        if let Some(default) = block.attribute("default") {
            let value = match &default.expr {
                Expression::Literal(lit) => eval::literal_value(lit),
                _ => {
                    return Err(ConfigError::Invalid {
                        span: default.span.clone(),
                        message: format!(
                            "default for variable `{name}` must be a string, number or bool"
                        ),
                    })
                }
            };
            variables.insert(name.clone(), value);
        }
    }
    for (name, value) in var_overrides {
        if !merged
            .iter()
            .any(|b| b.kind == BlockKind::Variable && &b.labels[0] == name)
        {
            return Err(ConfigError::Invalid {
                span: SourceSpan::start_of(Path::new("<command line>").into()),
                message: format!("value given for undeclared variable `{name}`"),
            });
        }
        variables.insert(name.clone(), value.clone());
    }

    for block in &merged {
        if block.kind == BlockKind::Variable {
            continue;
        }
        for (reference, span) in block.references() {
            if reference.parts[0] == "var" {
                let name = reference.parts.get(1).cloned().unwrap_or_default();
                if !variables.contains_key(&name) {
                    return Err(ConfigError::UndefinedVariable {
                        name,
                        span: span.clone(),
                    });
                }
            }
        }
    }

    Ok(ConfigDocument {
        blocks: merged,
        source_files,
        variables,
    })
}
