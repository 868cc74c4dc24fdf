use std::fmt::Write;

use microform::exec::ApplyReport;
use microform::value::UNKNOWN_SENTINEL;
use microform::provider::{type_specs, Schemas};
use microform::{Action, Attributes, Plan, PlannedChange, Value};

pub fn value(v: &Value) -> String {
    if v.is_unknown() {
        UNKNOWN_SENTINEL.to_string()
    } else {
        v.to_json().to_string()
    }
}

/// The marker line for one change, or `None` for a no-op.
pub fn change_line(change: &PlannedChange) -> Option<String> {
    let addr = &change.address;
    Some(match change.action {
        Action::Create => format!("  + create {addr}"),
        Action::Update => format!("  ~ update {addr}"),
        Action::Replace => format!("-/+ replace {addr}"),
        Action::Delete => format!("  - delete {addr}"),
        Action::Read => format!(" <= read {addr}"),
        Action::NoOp => return None,
    })
}

fn attribute_block(out: &mut String, attrs: &Attributes) {
    let width = attrs.keys().map(String::len).max().unwrap_or(0);
    for (k, v) in attrs {
        let _ = writeln!(out, "      {k:width$} = {}", value(v));
    }
}

fn changed_block(out: &mut String, change: &PlannedChange) {
    let empty = Attributes::new();
    let before = change.before.as_ref().unwrap_or(&empty);
    let after = change.after.as_ref().unwrap_or(&empty);
    for path in &change.changed_paths {
        let old = before.get(path).map(value).unwrap_or_else(|| "null".into());
        let new = after.get(path).map(value).unwrap_or_else(|| "null".into());
        let _ = writeln!(out, "      {path}: {old} -> {new}");
    }
}

/// What a create will set: the planned attributes plus every computed
/// attribute of the type, which only the provider can fill in.
fn create_attributes(change: &PlannedChange, schemas: &Schemas) -> Attributes {
    let mut attrs = change.after.clone().unwrap_or_default();
    let specs = type_specs(schemas, &change.address.type_name, change.address.is_data()).unwrap_or(&[]);
    for spec in specs.iter().filter(|s| s.is_computed()) {
        attrs.entry(spec.name.clone()).or_insert(Value::Unknown);
    }
    attrs
}

/// The full plan listing: one marker line per non-no-op change with its
/// attribute details indented below, then the summary line.
pub fn plan(plan: &Plan, schemas: &Schemas) -> String {
    let mut out = String::new();
    let active: Vec<&PlannedChange> = plan.changes.iter().filter(|c| c.action != Action::NoOp).collect();
    if active.is_empty() {
        out.push_str("No changes. Infrastructure matches the configuration.\n\n");
    } else {
        out.push_str("Planned actions:\n\n");
        for change in active {
            let _ = writeln!(out, "{}", change_line(change).expect("not a no-op"));
            match change.action {
                Action::Create | Action::Read => attribute_block(&mut out, &create_attributes(change, schemas)),
                Action::Update | Action::Replace => changed_block(&mut out, change),
                _ => {}
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "{}", plan.summary());
    out
}

/// Closing lines after an apply.
pub fn report(report: &ApplyReport) -> String {
    let s = report.summary();
    if report.is_success() {
        format!("\n{s}\n")
    } else {
        format!(
            "\nApply failed: {} added, {} changed, {} destroyed; {} failed, {} skipped.\n",
            s.added,
            s.changed,
            s.destroyed,
            report.failed.len(),
            report.skipped.len()
        )
    }
}
