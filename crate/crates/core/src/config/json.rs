//! The JSON form of the configuration language.
//!
//! The top-level object is keyed by block kind. `resource` and `data` nest
//! as kind → type → name → body; `provider`, `variable` and `output` as
//! kind → label → body; `terraform` maps straight to its body. Strings are
//! scanned for `${...}` exactly like native strings.
//!
//! JSON cannot distinguish a nested block from a map-valued attribute, so
//! object members directly inside the `terraform` body are read as nested
//! blocks; everywhere else an object is a map.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{Map, Value as Json};

use super::ast::{Attribute, Block, BlockKind, Expression, Literal, SourceSpan, TemplatePart};
use super::lexer::template_parts;
use super::ConfigError;
use crate::address::is_valid_label;

/// Parses a `.tf.json` document into blocks.
pub fn load_json(document: &str, file: &Path) -> Result<Vec<Block>, ConfigError> {
    let file: Arc<Path> = Arc::from(file);
    let json: Json = serde_json::from_str(document).map_err(|e| ConfigError::Syntax {
        span: SourceSpan::new(
            file.clone(),
            e.line().max(1) as u32,
            e.column().max(1) as u32,
        ),
        message: format!("malformed JSON: {e}"),
    })?;
    let span = SourceSpan::start_of(file);
    let invalid = |message: String| ConfigError::Invalid {
        span: span.clone(),
        message,
    };
    let top = json
        .as_object()
        .ok_or_else(|| invalid("top level must be a JSON object".to_string()))?;

    let mut blocks = Vec::new();
    for (key, value) in top {
        let kind = BlockKind::top_level(key)
            .ok_or_else(|| invalid(format!("unknown block kind `{key}`")))?;
        let level = |v: &'_ Json, what: &str| -> Result<Map<String, Json>, ConfigError> {
            v.as_object()
                .cloned()
                .ok_or_else(|| invalid(format!("`{key}`: expected an object of {what}")))
        };
        match kind.label_count() {
            Some(0) => blocks.push(block_from_json(kind, vec![], value, &span)?),
            Some(1) => {
                for (label, body) in level(value, "labels")? {
                    blocks.push(block_from_json(kind.clone(), vec![label], &body, &span)?);
                }
            }
            _ => {
                for (type_name, by_name) in level(value, "types")? {
                    for (name, body) in level(&by_name, "names")? {
                        blocks.push(block_from_json(
                            kind.clone(),
                            vec![type_name.clone(), name],
                            &body,
                            &span,
                        )?);
                    }
                }
            }
        }
    }
    Ok(blocks)
}

fn block_from_json(
    kind: BlockKind,
    labels: Vec<String>,
    body: &Json,
    span: &SourceSpan,
) -> Result<Block, ConfigError> {
    let Some(members) = body.as_object() else {
        return Err(ConfigError::Invalid {
            span: span.clone(),
            message: format!("`{kind}` body must be a JSON object (wrong nesting depth?)"),
        });
    };
    if let Some(bad) = labels.iter().find(|l| !is_valid_label(l)) {
        return Err(ConfigError::Invalid {
            span: span.clone(),
            message: format!("invalid block label `{bad}`"),
        });
    }
    let mut attrs = Vec::new();
    let mut nested_blocks = Vec::new();
    for (name, value) in members {
        if kind == BlockKind::Terraform && value.is_object() {
            nested_blocks.push(block_from_json(
                BlockKind::Nested(name.clone()),
                vec![],
                value,
                span,
            )?);
        } else {
            attrs.push(Attribute {
                name: name.clone(),
                expr: expression_from_json(value, span)?,
                span: span.clone(),
            });
        }
    }
    Ok(Block {
        kind,
        labels,
        body: attrs,
        nested_blocks,
        span: span.clone(),
    })
}

fn expression_from_json(value: &Json, span: &SourceSpan) -> Result<Expression, ConfigError> {
    Ok(match value {
        Json::Null => {
            return Err(ConfigError::Invalid {
                span: span.clone(),
                message: "null is not a supported value".to_string(),
            })
        }
        Json::Bool(b) => Expression::Literal(Literal::Bool(*b)),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Expression::Literal(Literal::Int(i)),
            None => Expression::Literal(Literal::Float(n.as_f64().unwrap_or(f64::NAN))),
        },
        Json::String(s) => Expression::from_string_parts(template_parts(s, span)?),
        Json::Array(items) => Expression::List(
            items
                .iter()
                .map(|v| expression_from_json(v, span))
                .collect::<Result<_, _>>()?,
        ),
        Json::Object(entries) => Expression::Map(
            entries
                .iter()
                .map(|(k, v)| Ok((k.clone(), expression_from_json(v, span)?)))
                .collect::<Result<BTreeMap<_, _>, ConfigError>>()?,
        ),
    })
}

/// Mechanically translates native blocks to the JSON form.
///
/// Blocks of the same kind are grouped under one key, so loading the result
/// yields the same blocks grouped by kind. Nested blocks are only
/// representable inside `terraform`; elsewhere they are rejected.
pub fn to_json(blocks: &[Block]) -> Result<Json, ConfigError> {
    let mut top = Map::new();
    for block in blocks {
        let body = body_to_json(block)?;
        let key = block.kind.keyword().to_string();
        match block.labels.as_slice() {
            [] => {
                top.insert(key, body);
            }
            [label] => {
                let slot = top.entry(key).or_insert_with(|| Json::Object(Map::new()));
                if let Json::Object(m) = slot {
                    m.insert(label.clone(), body);
                }
            }
            [type_name, name] => {
                let slot = top.entry(key).or_insert_with(|| Json::Object(Map::new()));
                if let Json::Object(m) = slot {
                    let by_type = m
                        .entry(type_name.clone())
                        .or_insert_with(|| Json::Object(Map::new()));
                    if let Json::Object(names) = by_type {
                        names.insert(name.clone(), body);
                    }
                }
            }
            _ => unreachable!("blocks carry at most two labels"),
        }
    }
    Ok(Json::Object(top))
}

fn body_to_json(block: &Block) -> Result<Json, ConfigError> {
    let mut body = Map::new();
    for attr in &block.body {
        let value = expression_to_json(&attr.expr).ok_or_else(|| ConfigError::Invalid {
            span: attr.span.clone(),
            message: format!("`{}`: a `$` directly before `${{` has no JSON representation", attr.name),
        })?;
        body.insert(attr.name.clone(), value);
    }
    for nested in &block.nested_blocks {
        if block.kind != BlockKind::Terraform || !nested.labels.is_empty() {
            return Err(ConfigError::Invalid {
                span: nested.span.clone(),
                message: format!(
                    "nested block `{}` has no JSON representation here",
                    nested.kind
                ),
            });
        }
        if !nested.nested_blocks.is_empty() {
            return Err(ConfigError::Invalid {
                span: nested.span.clone(),
                message: "doubly nested blocks have no JSON representation".to_string(),
            });
        }
        body.insert(nested.kind.keyword().to_string(), body_to_json(nested)?);
    }
    Ok(Json::Object(body))
}

fn escape_dollar(s: &str) -> String {
    s.replace("${", "$${")
}

/// `None` when the expression has no JSON spelling: a literal `$` right
/// before an interpolation would read back as the `$${` escape.
fn expression_to_json(expr: &Expression) -> Option<Json> {
    Some(match expr {
        Expression::Literal(Literal::String(s)) => Json::String(escape_dollar(s)),
        Expression::Literal(Literal::Int(i)) => Json::from(*i),
        Expression::Literal(Literal::Float(f)) => serde_json::Number::from_f64(*f)
            .map(Json::Number)
            .unwrap_or(Json::Null),
        Expression::Literal(Literal::Bool(b)) => Json::Bool(*b),
        Expression::List(items) => Json::Array(
            items
                .iter()
                .map(expression_to_json)
                .collect::<Option<_>>()?,
        ),
        Expression::Map(entries) => Json::Object(
            entries
                .iter()
                .map(|(k, v)| Some((k.clone(), expression_to_json(v)?)))
                .collect::<Option<_>>()?,
        ),
        Expression::Reference(r) => Json::String(format!("${{{r}}}")),
        Expression::Template(parts) => {
            let mut s = String::new();
            for (i, part) in parts.iter().enumerate() {
                match part {
                    TemplatePart::Literal(l) => {
                        if l.ends_with('$') && matches!(parts.get(i + 1), Some(TemplatePart::Reference(_))) {
                            return None;
                        }
                        s.push_str(&escape_dollar(l))
                    }
                    TemplatePart::Reference(r) => s.push_str(&format!("${{{r}}}")),
                }
            }
            Json::String(s)
        }
    })
}
