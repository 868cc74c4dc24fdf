//! Planning: comparing desired configuration with recorded state.
//!
//! [`diff`] classifies every address in the configuration or the state:
//!
//! | situation | action |
//! |---|---|
//! | configured, not in state | `Create` |
//! | both, all attributes equal | `NoOp` |
//! | both, only mutable attributes differ | `Update` |
//! | both, a force-new attribute differs | `Replace` |
//! | in state, not configured | `Delete` |
//! | data block | `Read` (or `NoOp` once read at plan time) |
//!
//! Values that depend on attributes a provider has not produced yet are
//! [`Value::Unknown`] in the plan. For each such attribute the change keeps
//! the partially evaluated expression in `deferred`, so the executor can
//! finish the evaluation once the dependency has been applied.

mod file;
mod refresh;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};

pub use self::file::{load_plan, plan_from_json, plan_to_json, save_plan, PLAN_FORMAT_VERSION};
pub use self::refresh::{refresh, refresh_with_parallelism};
use crate::address::ResourceAddress;
use crate::config::{evaluate, residual, ConfigDocument, EvalContext, EvalError, Expression};
use crate::graph::{self, DependencyGraph, GraphError};
use crate::provider::{
    type_specs, validate_against, AttributeMode, AttributeSpec, ConfiguredProviders, Diagnostic,
    ProviderError, Schemas,
};
use crate::state::StateSnapshot;
use crate::value::{Attributes, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Create,
    Update,
    Replace,
    Delete,
    NoOp,
    Read,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Create => "create",
            Action::Update => "update",
            Action::Replace => "replace",
            Action::Delete => "delete",
            Action::NoOp => "noop",
            Action::Read => "read",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Some(match s {
            "create" => Action::Create,
            "update" => Action::Update,
            "replace" => Action::Replace,
            "delete" => Action::Delete,
            "noop" => Action::NoOp,
            "read" => Action::Read,
            _ => return None,
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedChange {
    pub address: ResourceAddress,
    pub action: Action,
    pub before: Option<Attributes>,
    pub after: Option<Attributes>,
    /// Attributes that differ, sorted.
    pub changed_paths: Vec<String>,
    /// Config dependencies, or for a delete the ones recorded in state.
    pub dependencies: Vec<ResourceAddress>,
    /// For each attribute that is unknown in `after`, the expression that
    /// will produce it once its dependencies are applied.
    pub deferred: BTreeMap<String, Expression>,
}

impl PlannedChange {
    /// Names of the attributes in `after` that are unknown.
    pub fn unknown_paths(&self) -> Vec<String> {
        self.after
            .iter()
            .flatten()
            .filter(|(_, v)| v.contains_unknown())
            .map(|(k, _)| k.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub created_at: DateTime<Utc>,
    pub base_serial: u64,
    pub base_lineage: String,
    pub changes: Vec<PlannedChange>,
    pub is_destroy: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanSummary {
    pub add: usize,
    pub change: usize,
    pub destroy: usize,
    pub read: usize,
}

impl PlanSummary {
    pub fn is_empty(&self) -> bool {
        self.add == 0 && self.change == 0 && self.destroy == 0
    }
}

impl fmt::Display for PlanSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Plan: {} to add, {} to change, {} to destroy.",
            self.add, self.change, self.destroy
        )
    }
}

impl Plan {
    /// Counts a replace as one add plus one destroy.
    pub fn summary(&self) -> PlanSummary {
        let mut s = PlanSummary::default();
        for c in &self.changes {
            match c.action {
                Action::Create => s.add += 1,
                Action::Update => s.change += 1,
                Action::Replace => {
                    s.add += 1;
                    s.destroy += 1;
                }
                Action::Delete => s.destroy += 1,
                Action::Read => s.read += 1,
                Action::NoOp => {}
            }
        }
        s
    }

    pub fn change(&self, address: &ResourceAddress) -> Option<&PlannedChange> {
        self.changes.iter().find(|c| &c.address == address)
    }

    /// True when applying would do nothing.
    pub fn is_noop(&self) -> bool {
        self.changes.iter().all(|c| c.action == Action::NoOp)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{address}.{attribute}: {source}")]
    Eval {
        address: ResourceAddress,
        attribute: String,
        source: EvalError,
    },
    #[error("{address}: {}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Schema {
        address: ResourceAddress,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("{address}: no provider schema declares type `{type_name}`")]
    UnsupportedType {
        address: ResourceAddress,
        type_name: String,
    },
    #[error("{address}: {source}")]
    Provider {
        address: ResourceAddress,
        source: ProviderError,
    },
    #[error("malformed plan file: {0}")]
    Malformed(String),
    #[error("unsupported plan format version {0}")]
    VersionMismatch(u64),
    #[error("plan file I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Dependency graph of the resources recorded in `state`. Dependencies on
/// addresses no longer in state are ignored.
pub fn state_graph(state: &StateSnapshot) -> Result<DependencyGraph, GraphError> {
    let mut g = DependencyGraph::new();
    for addr in state.resources.keys() {
        g.add_node(addr.clone());
    }
    for (addr, r) in &state.resources {
        for dep in &r.dependencies {
            if dep != addr && state.resources.contains_key(dep) {
                g.add_edge(addr.clone(), dep.clone())?;
            }
        }
    }
    Ok(g)
}

/// Config values plus defaults for unset optional attributes.
fn desired_attributes(specs: &[AttributeSpec], config: &Attributes) -> Attributes {
    let mut desired = config.clone();
    for spec in specs {
        if spec.mode == AttributeMode::Optional && !desired.contains_key(&spec.name) {
            if let Some(default) = &spec.default {
                desired.insert(spec.name.clone(), default.clone());
            }
        }
    }
    desired
}

/// `attrs` with every computed attribute unknown, except those in `keep`.
fn with_unknown_computed(specs: &[AttributeSpec], attrs: &Attributes, keep: &[&str]) -> Attributes {
    let mut out = attrs.clone();
    for spec in specs.iter().filter(|s| s.is_computed()) {
        if !keep.contains(&spec.name.as_str()) {
            out.insert(spec.name.clone(), Value::Unknown);
        }
    }
    out
}

/// Names of the configurable attributes whose desired value differs from
/// the recorded one. A value that is not known yet always differs.
pub fn changed_attributes(specs: &[AttributeSpec], desired: &Attributes, current: &Attributes) -> Vec<String> {
    let mut changed: Vec<String> = specs
        .iter()
        .filter(|s| !s.is_computed())
        .filter(|s| {
            let d = desired.get(&s.name);
            d.is_some_and(Value::contains_unknown) || d != current.get(&s.name)
        })
        .map(|s| s.name.clone())
        .collect();
    changed.sort();
    changed
}

/// Computes the plan that makes `state` match `doc`. Data sources are
/// planned as reads.
pub fn diff(doc: &ConfigDocument, state: &StateSnapshot, schemas: &Schemas) -> Result<Plan, PlanError> {
    plan_changes(doc, state, schemas, None)
}

/// Like [`diff`], but data sources whose arguments are known are read now,
/// so the plan sees their values.
pub fn diff_with_data(
    doc: &ConfigDocument,
    state: &StateSnapshot,
    providers: &ConfiguredProviders,
) -> Result<Plan, PlanError> {
    plan_changes(doc, state, providers.schemas(), Some(providers))
}

fn plan_changes(
    doc: &ConfigDocument,
    state: &StateSnapshot,
    schemas: &Schemas,
    providers: Option<&ConfiguredProviders>,
) -> Result<Plan, PlanError> {
    let g = graph::build_graph(doc)?;
    let order = graph::topo_order(&g)?;
    let mut ctx: EvalContext = doc.eval_context();
    let mut changes = Vec::with_capacity(order.len());

    for address in &order {
        let block = doc.resource(address).expect("graph nodes come from the document");
        let is_data = address.is_data();
        let specs = type_specs(schemas, &address.type_name, is_data).ok_or_else(|| {
            PlanError::UnsupportedType {
                address: address.clone(),
                type_name: address.type_name.clone(),
            }
        })?;

        let mut config = Attributes::new();
        let mut deferred = BTreeMap::new();
        for attr in &block.body {
            let eval_err = |source| PlanError::Eval {
                address: address.clone(),
                attribute: attr.name.clone(),
                source,
            };
            let value = evaluate(&attr.expr, &ctx).map_err(eval_err)?;
            if value.contains_unknown() {
                deferred.insert(attr.name.clone(), residual(&attr.expr, &ctx).map_err(eval_err)?);
                config.insert(attr.name.clone(), Value::Unknown);
            } else {
                config.insert(attr.name.clone(), value);
            }
        }
        let diagnostics = validate_against(specs, &config);
        if !diagnostics.is_empty() {
            return Err(PlanError::Schema {
                address: address.clone(),
                diagnostics,
            });
        }
        let desired = desired_attributes(specs, &config);
        let dependencies: Vec<ResourceAddress> = g.dependencies(address).into_iter().cloned().collect();

        let change = if is_data {
            let known = deferred.is_empty();
            match providers.filter(|_| known) {
                Some(p) => {
                    let handle = p.for_type(&address.type_name).map_err(|source| PlanError::Provider {
                        address: address.clone(),
                        source,
                    })?;
                    let result = handle
                        .read_data(&address.type_name, &desired)
                        .map_err(|source| PlanError::Provider {
                            address: address.clone(),
                            source,
                        })?;
                    ctx.resources.insert(address.clone(), result.clone());
                    PlannedChange {
                        address: address.clone(),
                        action: Action::NoOp,
                        before: Some(result.clone()),
                        after: Some(result),
                        changed_paths: vec![],
                        dependencies,
                        deferred,
                    }
                }
                None => {
                    let after = with_unknown_computed(specs, &desired, &[]);
                    ctx.resources.insert(address.clone(), after.clone());
                    PlannedChange {
                        address: address.clone(),
                        action: Action::Read,
                        before: None,
                        after: Some(after),
                        changed_paths: vec![],
                        dependencies,
                        deferred,
                    }
                }
            }
        } else {
            match state.resources.get(address) {
                None => {
                    ctx.resources
                        .insert(address.clone(), with_unknown_computed(specs, &desired, &[]));
                    let changed_paths = desired.keys().cloned().collect();
                    PlannedChange {
                        address: address.clone(),
                        action: Action::Create,
                        before: None,
                        after: Some(desired),
                        changed_paths,
                        dependencies,
                        deferred,
                    }
                }
                Some(current) => {
                    let before = current.attributes.clone();
                    let changed = changed_attributes(specs, &desired, &before);
                    let replace = changed
                        .iter()
                        .any(|name| specs.iter().any(|s| &s.name == name && s.force_new));
                    let (action, after, visible) = if changed.is_empty() {
                        (Action::NoOp, before.clone(), before.clone())
                    } else if replace {
                        let visible = with_unknown_computed(specs, &desired, &[]);
                        (Action::Replace, desired, visible)
                    } else {
                        let mut after = before.clone();
                        for spec in specs.iter().filter(|s| !s.is_computed()) {
                            match desired.get(&spec.name) {
                                Some(v) => after.insert(spec.name.clone(), v.clone()),
                                None => after.remove(&spec.name),
                            };
                        }
                        let visible = with_unknown_computed(specs, &after, &["id"]);
                        (Action::Update, after, visible)
                    };
                    ctx.resources.insert(address.clone(), visible);
                    PlannedChange {
                        address: address.clone(),
                        action,
                        before: Some(before),
                        after: Some(after),
                        changed_paths: changed,
                        dependencies,
                        deferred: if action == Action::NoOp {
                            BTreeMap::new()
                        } else {
                            deferred
                        },
                    }
                }
            }
        };
        changes.push(change);
    }

    // Resources only in state: dependents deleted first.
    let configured: BTreeSet<&ResourceAddress> = order.iter().collect();
    let sg = state_graph(state)?;
    for address in graph::topo_order(&graph::reverse(&sg))? {
        if configured.contains(&address) {
            continue;
        }
        let current = &state.resources[&address];
        changes.push(PlannedChange {
            address: address.clone(),
            action: Action::Delete,
            before: Some(current.attributes.clone()),
            after: None,
            changed_paths: vec![],
            dependencies: current.dependencies.clone(),
            deferred: BTreeMap::new(),
        });
    }

    Ok(Plan {
        created_at: Utc::now(),
        base_serial: state.serial,
        base_lineage: state.lineage.clone(),
        changes,
        is_destroy: false,
    })
}

/// One delete per recorded resource, dependents first.
pub fn plan_destroy(state: &StateSnapshot) -> Result<Plan, PlanError> {
    let g = state_graph(state)?;
    let changes = graph::topo_order(&graph::reverse(&g))?
        .into_iter()
        .map(|address| {
            let current = &state.resources[&address];
            PlannedChange {
                address,
                action: Action::Delete,
                before: Some(current.attributes.clone()),
                after: None,
                changed_paths: vec![],
                dependencies: current.dependencies.clone(),
                deferred: BTreeMap::new(),
            }
        })
        .collect();
    Ok(Plan {
        created_at: Utc::now(),
        base_serial: state.serial,
        base_lineage: state.lineage.clone(),
        changes,
        is_destroy: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_str;
    use crate::provider::Registry;
    use crate::state::ResourceState;

    fn doc(src: &str) -> ConfigDocument {
        ConfigDocument::from_blocks(load_str(src).unwrap(), BTreeMap::new()).unwrap()
    }

    fn plan(src: &str, state: &StateSnapshot) -> Plan {
        let d = doc(src);
        diff(&d, state, &Registry::builtin().schemas_for(&d).unwrap()).unwrap()
    }

    fn recorded(type_name: &str, name: &str, attrs: &[(&str, Value)], deps: &[&str]) -> ResourceState {
        ResourceState {
            type_name: type_name.into(),
            name: name.into(),
            provider: "memcloud".into(),
            id: attrs
                .iter()
                .find(|(k, _)| *k == "id")
                .map(|(_, v)| v.to_string())
                .unwrap_or_default(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            dependencies: deps.iter().map(|d| d.parse().unwrap()).collect(),
        }
    }

    fn with(mut s: StateSnapshot, r: ResourceState) -> StateSnapshot {
        s.resources.insert(r.address(), r);
        s
    }

    const NET: &str = r#"
        provider "memcloud" { endpoint = "http://unused" }
        resource "memcloud_vpc" "main" { cidr = "10.0.0.0/16" }
        resource "memcloud_subnet" "a" {
          vpc_id = memcloud_vpc.main.id
          cidr   = "10.0.1.0/24"
        }
    "#;

    #[test]
    fn empty_against_empty() {
        let p = plan("", &StateSnapshot::empty());
        assert!(p.changes.is_empty());
    }

    #[test]
    fn creates_carry_unknown_references() {
        let p = plan(NET, &StateSnapshot::empty());
        let actions: Vec<_> = p.changes.iter().map(|c| (c.address.to_string(), c.action)).collect();
        assert_eq!(
            actions,
            [
                ("memcloud_vpc.main".to_string(), Action::Create),
                ("memcloud_subnet.a".to_string(), Action::Create)
            ]
        );
        let subnet = &p.changes[1];
        assert_eq!(subnet.after.as_ref().unwrap()["vpc_id"], Value::Unknown);
        assert_eq!(subnet.unknown_paths(), ["vpc_id"]);
        assert!(subnet.deferred.contains_key("vpc_id"));
        assert_eq!(subnet.dependencies, [ResourceAddress::managed("memcloud_vpc", "main")]);
    }

    #[test]
    fn noop_update_replace() {
        let base = with(
            with(
                StateSnapshot::empty(),
                recorded(
                    "memcloud_vpc",
                    "main",
                    &[("id", "vpc-000001".into()), ("cidr", "10.0.0.0/16".into())],
                    &[],
                ),
            ),
            recorded(
                "memcloud_subnet",
                "a",
                &[
                    ("id", "sub-000001".into()),
                    ("vpc_id", "vpc-000001".into()),
                    ("cidr", "10.0.1.0/24".into()),
                ],
                &["memcloud_vpc.main"],
            ),
        );
        let p = plan(NET, &base);
        assert!(p.is_noop());
        assert_eq!(p.changes[0].before, p.changes[0].after);

        let changed = NET.replace("10.0.1.0/24", "10.0.2.0/24");
        let p = plan(&changed, &base);
        let subnet = p.change(&"memcloud_subnet.a".parse().unwrap()).unwrap();
        assert_eq!(subnet.action, Action::Replace);
        assert_eq!(subnet.changed_paths, ["cidr"]);
    }

    #[test]
    fn update_of_mutable_attribute_with_default() {
        let src = r#"
            provider "memcloud" { endpoint = "x" }
            resource "memcloud_instance" "web" {
              subnet_id = "sub-000001"
              image     = "debian"
              size      = "large"
            }
        "#;
        let state = with(
            StateSnapshot::empty(),
            recorded(
                "memcloud_instance",
                "web",
                &[
                    ("id", "inst-000001".into()),
                    ("subnet_id", "sub-000001".into()),
                    ("image", "debian".into()),
                    ("size", "small".into()),
                    ("private_ip", "10.0.0.1".into()),
                ],
                &[],
            ),
        );
        let p = plan(src, &state);
        let c = &p.changes[0];
        assert_eq!(c.action, Action::Update);
        assert_eq!(c.changed_paths, ["size"]);
        let after = c.after.as_ref().unwrap();
        assert_eq!(after["private_ip"], Value::from("10.0.0.1"));
        assert_eq!(after["size"], Value::from("large"));

        // Removing the explicit size falls back to the default: no change.
        let p = plan(&src.replace("size      = \"large\"", "size = \"small\""), &state);
        assert!(p.is_noop());
    }

    #[test]
    fn orphans_deleted_dependents_first() {
        let state = with(
            with(
                StateSnapshot::empty(),
                recorded("memcloud_vpc", "main", &[("id", "vpc-1".into())], &[]),
            ),
            recorded("memcloud_subnet", "a", &[("id", "sub-1".into())], &["memcloud_vpc.main"]),
        );
        let p = plan(r#"provider "memcloud" { endpoint = "x" }"#, &state);
        let order: Vec<_> = p.changes.iter().map(|c| c.address.to_string()).collect();
        assert_eq!(order, ["memcloud_subnet.a", "memcloud_vpc.main"]);
        assert!(p.changes.iter().all(|c| c.action == Action::Delete && c.after.is_none()));

        let d = plan_destroy(&state).unwrap();
        assert!(d.is_destroy);
        assert_eq!(
            d.changes.iter().map(|c| c.address.to_string()).collect::<Vec<_>>(),
            order
        );
        assert!(plan_destroy(&StateSnapshot::empty()).unwrap().changes.is_empty());
    }

    #[test]
    fn schema_violations_are_reported() {
        let d = doc(r#"
            provider "memcloud" { endpoint = "x" }
            resource "memcloud_vpc" "main" { cidr = 3 }
        "#);
        let err = diff(&d, &StateSnapshot::empty(), &Registry::builtin().schemas_for(&d).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("cidr: expected string"), "{err}");
    }

    #[test]
    fn summary_counts_replace_twice() {
        let mut p = plan(NET, &StateSnapshot::empty());
        p.changes[1].action = Action::Replace;
        assert_eq!(
            p.summary(),
            PlanSummary {
                add: 2,
                change: 0,
                destroy: 1,
                read: 0
            }
        );
        assert_eq!(p.summary().to_string(), "Plan: 2 to add, 0 to change, 1 to destroy.");
    }
}
