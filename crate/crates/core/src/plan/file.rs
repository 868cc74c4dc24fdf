use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value as Json};

use super::{Action, Plan, PlanError, PlannedChange};
use crate::config::{format_expression, parse_expression};
use crate::value::{Attributes, Value, UNKNOWN_SENTINEL};

pub const PLAN_FORMAT_VERSION: u64 = 1;

fn attrs_json(attrs: Option<&Attributes>) -> Json {
    match attrs {
        None => Json::Null,
        Some(a) => Value::attributes_to_json(a),
    }
}

/// The plan document. Unknown values are written as the sentinel string and
/// listed by attribute name in `unknown_paths`.
pub fn plan_to_json(plan: &Plan) -> Json {
    let changes: Vec<Json> = plan
        .changes
        .iter()
        .map(|c| {
            json!({
                "address": c.address.to_string(),
                "action": c.action.as_str(),
                "before": attrs_json(c.before.as_ref()),
                "after": attrs_json(c.after.as_ref()),
                "changed_paths": c.changed_paths,
                "unknown_paths": c.unknown_paths(),
                "deferred": c.deferred.iter()
                    .map(|(k, e)| (k.clone(), Json::String(format_expression(e))))
                    .collect::<Map<_, _>>(),
                "dependencies": c.dependencies.iter().map(ToString::to_string).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "format_version": PLAN_FORMAT_VERSION,
        "created_at": plan.created_at.to_rfc3339(),
        "base_serial": plan.base_serial,
        "base_lineage": plan.base_lineage,
        "is_destroy": plan.is_destroy,
        "changes": changes,
    })
}

fn malformed(msg: impl Into<String>) -> PlanError {
    PlanError::Malformed(msg.into())
}

fn string_list(v: &Json, what: &str) -> Result<Vec<String>, PlanError> {
    match v {
        Json::Null => Ok(vec![]),
        Json::Array(items) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| malformed(format!("{what}: expected strings")))
            })
            .collect(),
        _ => Err(malformed(format!("{what}: expected a list"))),
    }
}

fn attrs_from(v: &Json, unknown: &[String], what: &str) -> Result<Option<Attributes>, PlanError> {
    if v.is_null() {
        return Ok(None);
    }
    let mut attrs =
        Value::attributes_from_json(v).ok_or_else(|| malformed(format!("{what}: expected an object")))?;
    for path in unknown {
        match attrs.get_mut(path) {
            Some(slot) if slot.as_str() == Some(UNKNOWN_SENTINEL) => *slot = Value::Unknown,
            _ => return Err(malformed(format!("{what}: unknown path `{path}` has no sentinel"))),
        }
    }
    Ok(Some(attrs))
}

pub fn plan_from_json(doc: &Json) -> Result<Plan, PlanError> {
    let version = doc["format_version"]
        .as_u64()
        .ok_or_else(|| malformed("missing format_version"))?;
    if version != PLAN_FORMAT_VERSION {
        return Err(PlanError::VersionMismatch(version));
    }
    let created_at = doc["created_at"]
        .as_str()
        .and_then(|s| chrono::DateTime::parse_from_rfc3339(s).ok())
        .ok_or_else(|| malformed("bad created_at"))?
        .with_timezone(&chrono::Utc);
    let base_serial = doc["base_serial"]
        .as_u64()
        .ok_or_else(|| malformed("bad base_serial"))?;
    let base_lineage = doc["base_lineage"]
        .as_str()
        .ok_or_else(|| malformed("bad base_lineage"))?
        .to_string();
    let is_destroy = doc["is_destroy"]
        .as_bool()
        .ok_or_else(|| malformed("bad is_destroy"))?;
    let mut changes = Vec::new();
    for c in doc["changes"]
        .as_array()
        .ok_or_else(|| malformed("changes must be a list"))?
    {
        let address = c["address"]
            .as_str()
            .ok_or_else(|| malformed("change without address"))?
            .parse()
            .map_err(|e| malformed(format!("{e}")))?;
        let action = c["action"]
            .as_str()
            .and_then(Action::parse)
            .ok_or_else(|| malformed(format!("{address}: bad action")))?;
        let unknown = string_list(&c["unknown_paths"], "unknown_paths")?;
        let mut deferred = BTreeMap::new();
        if let Some(map) = c["deferred"].as_object() {
            for (k, v) in map {
                let text = v
                    .as_str()
                    .ok_or_else(|| malformed(format!("{address}: deferred `{k}` is not text")))?;
                let expr = parse_expression(text)
                    .map_err(|e| malformed(format!("{address}: deferred `{k}`: {e}")))?;
                deferred.insert(k.clone(), expr);
            }
        }
        let dependencies = string_list(&c["dependencies"], "dependencies")?
            .iter()
            .map(|d| d.parse().map_err(|e| malformed(format!("{e}"))))
            .collect::<Result<_, _>>()?;
        changes.push(PlannedChange {
            before: attrs_from(&c["before"], &[], "before")?,
            after: attrs_from(&c["after"], &unknown, "after")?,
            changed_paths: string_list(&c["changed_paths"], "changed_paths")?,
            address,
            action,
            dependencies,
            deferred,
        });
    }
    Ok(Plan {
        created_at,
        base_serial,
        base_lineage,
        changes,
        is_destroy,
    })
}

pub fn save_plan(plan: &Plan, path: &Path) -> Result<(), PlanError> {
    let mut text = serde_json::to_string_pretty(&plan_to_json(plan)).expect("plan serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_plan(path: &Path) -> Result<Plan, PlanError> {
    let text = std::fs::read_to_string(path)?;
    let doc: Json = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    plan_from_json(&doc)
}
