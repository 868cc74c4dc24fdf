//! Applying plans.
//!
//! Each non-noop change becomes one or two steps: a destroy step (deletes,
//! and the first half of a replace) and an apply step (creates, updates,
//! data reads, and the second half of a replace). Steps run on worker
//! threads as soon as the steps they wait for have succeeded, with at most
//! `parallelism` in flight:
//!
//! - an apply step waits for the apply steps of its config dependencies;
//! - a destroy step waits for the destroy steps of everything that depended
//!   on it in the old state;
//! - a replace's apply step waits for its own destroy step;
//! - a pure delete waits for updates that drop their reference to it.
//!
//! When a step fails, everything waiting on it (transitively) is skipped;
//! unrelated steps carry on. The resulting state is written once, at the
//! end, whether or not anything failed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::address::{provider_prefix, ResourceAddress};
use crate::config::{evaluate, EvalContext};
use crate::graph::DependencyGraph;
use crate::plan::{Action, Plan, PlannedChange};
use crate::provider::{ConfiguredProviders, Provider, ProviderError};
use crate::state::{ResourceState, StateError, StateLock, StateSnapshot};
use crate::value::Attributes;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(
        "plan is stale: state serial changed from {plan_serial} (lineage {plan_lineage}) \
         to {state_serial} (lineage {state_lineage}); run plan again"
    )]
    Stale {
        plan_serial: u64,
        plan_lineage: String,
        state_serial: u64,
        state_lineage: String,
    },
    #[error("{address}: unresolved value for `{attribute}` at apply time")]
    Unresolved {
        address: ResourceAddress,
        attribute: String,
    },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("applied changes could not be saved: {source}")]
    Persist {
        report: Box<ApplyReport>,
        source: StateError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyReport {
    pub succeeded: Vec<(ResourceAddress, Action)>,
    pub failed: Vec<(ResourceAddress, String)>,
    /// Changes not attempted because something they wait on failed.
    pub skipped: Vec<ResourceAddress>,
    pub duration: Duration,
    pub final_serial: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplySummary {
    pub added: usize,
    pub changed: usize,
    pub destroyed: usize,
}

impl fmt::Display for ApplySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Apply complete: {} added, {} changed, {} destroyed.",
            self.added, self.changed, self.destroyed
        )
    }
}

impl ApplyReport {
    pub fn summary(&self) -> ApplySummary {
        let mut s = ApplySummary::default();
        for (_, action) in &self.succeeded {
            match action {
                Action::Create => s.added += 1,
                Action::Update => s.changed += 1,
                Action::Replace => {
                    s.added += 1;
                    s.destroyed += 1;
                }
                Action::Delete => s.destroyed += 1,
                Action::NoOp | Action::Read => {}
            }
        }
        s
    }

    pub fn is_success(&self) -> bool {
        self.failed.is_empty() && self.skipped.is_empty()
    }
}

/// Progress notifications, one per change.
#[derive(Debug, Clone, PartialEq)]
pub enum ApplyEvent {
    Done {
        address: ResourceAddress,
        action: Action,
        id: Option<String>,
    },
    Failed {
        address: ResourceAddress,
        action: Action,
        error: String,
    },
    Skipped {
        address: ResourceAddress,
        action: Action,
    },
}

impl fmt::Display for ApplyEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApplyEvent::Done { address, action, id: Some(id) } => {
                write!(f, "{address}: {action}... done ({id})")
            }
            ApplyEvent::Done { address, action, id: None } => write!(f, "{address}: {action}... done"),
            ApplyEvent::Failed { address, action, error } => {
                write!(f, "{address}: {action}... failed: {error}")
            }
            ApplyEvent::Skipped { address, action } => {
                write!(f, "{address}: {action}... skipped (a dependency failed)")
            }
        }
    }
}

pub type Observer = Arc<dyn Fn(&ApplyEvent) + Send + Sync>;

#[derive(Clone)]
pub struct ApplyOptions {
    pub parallelism: usize,
    pub observer: Option<Observer>,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        ApplyOptions {
            parallelism: 10,
            observer: None,
        }
    }
}

impl ApplyOptions {
    pub fn with_parallelism(parallelism: usize) -> Self {
        ApplyOptions {
            parallelism,
            ..ApplyOptions::default()
        }
    }
}

/// Fills in the deferred attributes of `change` from the attributes of
/// already-applied resources. Fails if anything is still unknown.
pub fn resolve_unknowns(
    change: &PlannedChange,
    resolved: &BTreeMap<ResourceAddress, Attributes>,
) -> Result<PlannedChange, ExecError> {
    let mut out = change.clone();
    if change.deferred.is_empty() {
        return Ok(out);
    }
    let ctx = EvalContext {
        vars: BTreeMap::new(),
        resources: resolved.clone(),
    };
    let after = out.after.get_or_insert_with(Attributes::new);
    for (attribute, expr) in &change.deferred {
        let unresolved = || ExecError::Unresolved {
            address: change.address.clone(),
            attribute: attribute.clone(),
        };
        let value = evaluate(expr, &ctx).map_err(|_| unresolved())?;
        if value.contains_unknown() {
            return Err(unresolved());
        }
        after.insert(attribute.clone(), value);
    }
    out.deferred.clear();
    Ok(out)
}

/// What one provider interaction produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ChangeOutcome {
    Applied(ResourceState),
    Deleted,
    Read(Attributes),
}

fn resource_state(change: &PlannedChange, id: String, attributes: Attributes) -> ResourceState {
    ResourceState {
        type_name: change.address.type_name.clone(),
        name: change.address.name.clone(),
        provider: provider_prefix(&change.address.type_name).to_string(),
        id,
        attributes,
        dependencies: change
            .dependencies
            .iter()
            .filter(|d| !d.is_data())
            .cloned()
            .collect(),
    }
}

fn known_after(change: &PlannedChange) -> Result<Attributes, ExecError> {
    let after = change.after.clone().unwrap_or_default();
    if let Some((attribute, _)) = after.iter().find(|(_, v)| v.contains_unknown()) {
        return Err(ExecError::Unresolved {
            address: change.address.clone(),
            attribute: attribute.clone(),
        });
    }
    Ok(after)
}

#[derive(Debug)]
enum StepError {
    Provider(ProviderError),
    Unresolved(ExecError),
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::Provider(e) => e.fmt(f),
            StepError::Unresolved(e) => e.fmt(f),
        }
    }
}

fn run_destroy(change: &PlannedChange, provider: &dyn Provider, id: &str) -> Result<ChangeOutcome, StepError> {
    provider
        .delete(&change.address.type_name, id)
        .map(|()| ChangeOutcome::Deleted)
        .map_err(StepError::Provider)
}

/// The apply half: create, update or read. `change` must be resolved.
fn run_apply(
    change: &PlannedChange,
    provider: &dyn Provider,
    id: Option<&str>,
) -> Result<ChangeOutcome, StepError> {
    let type_name = &change.address.type_name;
    match change.action {
        Action::Read => {
            let args: Attributes = change
                .after
                .iter()
                .flatten()
                .filter(|(_, v)| !v.contains_unknown())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            provider
                .read_data(type_name, &args)
                .map(ChangeOutcome::Read)
                .map_err(StepError::Provider)
        }
        Action::Update => {
            let attrs = known_after(change).map_err(StepError::Unresolved)?;
            let id = id.expect("updates have a recorded id");
            let updated = provider.update(type_name, id, &attrs).map_err(StepError::Provider)?;
            Ok(ChangeOutcome::Applied(resource_state(change, id.to_string(), updated)))
        }
        _ => {
            let attrs = known_after(change).map_err(StepError::Unresolved)?;
            let created = provider.create(type_name, &attrs).map_err(StepError::Provider)?;
            Ok(ChangeOutcome::Applied(resource_state(change, created.id, created.attributes)))
        }
    }
}

/// Performs one whole change against `provider`. `prior` is the recorded
/// state for updates, replaces and deletes. A replace deletes first.
pub fn execute_change(
    change: &PlannedChange,
    provider: &dyn Provider,
    prior: Option<&ResourceState>,
) -> Result<ChangeOutcome, ProviderError> {
    let id = prior.map(|p| p.id.as_str());
    let flatten = |r: Result<ChangeOutcome, StepError>| {
        r.map_err(|e| match e {
            StepError::Provider(p) => p,
            StepError::Unresolved(u) => ProviderError::Other(u.to_string()),
        })
    };
    match change.action {
        Action::NoOp => Err(ProviderError::Other(format!("{}: nothing to do", change.address))),
        Action::Delete => {
            let id = id.ok_or_else(|| ProviderError::Other(format!("{}: no recorded id", change.address)))?;
            flatten(run_destroy(change, provider, id))
        }
        Action::Replace => {
            let old = id.ok_or_else(|| ProviderError::Other(format!("{}: no recorded id", change.address)))?;
            flatten(run_destroy(change, provider, old))?;
            flatten(run_apply(change, provider, None))
        }
        Action::Update if id.is_none() => {
            Err(ProviderError::Other(format!("{}: no recorded id", change.address)))
        }
        _ => flatten(run_apply(change, provider, id)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Destroy,
    Apply,
}

type StepId = (usize, Phase);

struct Schedule {
    steps: BTreeSet<StepId>,
    waits_on: BTreeMap<StepId, BTreeSet<StepId>>,
}

fn build_schedule(plan: &Plan, old: &StateSnapshot) -> Schedule {
    let index: BTreeMap<&ResourceAddress, usize> =
        plan.changes.iter().enumerate().map(|(i, c)| (&c.address, i)).collect();
    let mut steps = BTreeSet::new();
    for (i, c) in plan.changes.iter().enumerate() {
        match c.action {
            Action::NoOp => {}
            Action::Delete => {
                steps.insert((i, Phase::Destroy));
            }
            Action::Replace => {
                steps.insert((i, Phase::Destroy));
                steps.insert((i, Phase::Apply));
            }
            Action::Create | Action::Update | Action::Read => {
                steps.insert((i, Phase::Apply));
            }
        }
    }
    let mut waits_on: BTreeMap<StepId, BTreeSet<StepId>> =
        steps.iter().map(|s| (*s, BTreeSet::new())).collect();
    let edge = |from: StepId, to: StepId, waits_on: &mut BTreeMap<StepId, BTreeSet<StepId>>| {
        if from != to && steps.contains(&from) && steps.contains(&to) {
            waits_on.get_mut(&from).expect("step").insert(to);
        }
    };

    for (i, c) in plan.changes.iter().enumerate() {
        if c.action != Action::Delete {
            for dep in &c.dependencies {
                if let Some(&j) = index.get(dep) {
                    edge((i, Phase::Apply), (j, Phase::Apply), &mut waits_on);
                }
            }
        }
        edge((i, Phase::Apply), (i, Phase::Destroy), &mut waits_on);
    }
    for (y_addr, y) in &old.resources {
        let Some(&yi) = index.get(y_addr) else { continue };
        for x_addr in &y.dependencies {
            if let Some(&xi) = index.get(x_addr) {
                edge((xi, Phase::Destroy), (yi, Phase::Destroy), &mut waits_on);
            }
        }
    }
    // A pure delete waits for updates that stop referencing it, where that
    // does not close a cycle.
    for (y_addr, y) in &old.resources {
        let Some(&yi) = index.get(y_addr) else { continue };
        if plan.changes[yi].action != Action::Update {
            continue;
        }
        for x_addr in &y.dependencies {
            let Some(&xi) = index.get(x_addr) else { continue };
            if plan.changes[xi].action != Action::Delete {
                continue;
            }
            let from = (xi, Phase::Destroy);
            let to = (yi, Phase::Apply);
            if !reaches(&waits_on, to, from) {
                edge(from, to, &mut waits_on);
            }
        }
    }
    Schedule { steps, waits_on }
}

fn reaches(waits_on: &BTreeMap<StepId, BTreeSet<StepId>>, start: StepId, target: StepId) -> bool {
    let mut stack = vec![start];
    let mut seen = BTreeSet::new();
    while let Some(s) = stack.pop() {
        if s == target {
            return true;
        }
        if seen.insert(s) {
            stack.extend(waits_on.get(&s).into_iter().flatten().copied());
        }
    }
    false
}

/// The graph apply uses, at resource granularity: an edge `(a, b)` when
/// some step of `a` waits for some step of `b`.
pub fn execution_graph(plan: &Plan, old: &StateSnapshot) -> DependencyGraph {
    let schedule = build_schedule(plan, old);
    let mut g = DependencyGraph::new();
    for (i, _) in &schedule.steps {
        g.add_node(plan.changes[*i].address.clone());
    }
    for (from, tos) in &schedule.waits_on {
        for to in tos {
            if from.0 != to.0 {
                let _ = g.add_edge(
                    plan.changes[from.0].address.clone(),
                    plan.changes[to.0].address.clone(),
                );
            }
        }
    }
    g
}

enum StepResult {
    Ok(ChangeOutcome),
    Partial(ResourceState, String),
    Err(String),
}

/// Applies `plan` while holding `lock`.
pub fn apply(
    plan: &Plan,
    providers: &ConfiguredProviders,
    lock: &StateLock,
    opts: &ApplyOptions,
) -> Result<ApplyReport, ExecError> {
    let started = Instant::now();
    let loaded = lock.read_state()?;
    let stale = loaded.serial != plan.base_serial
        || (loaded.serial > 0 && loaded.lineage != plan.base_lineage);
    if stale {
        return Err(ExecError::Stale {
            plan_serial: plan.base_serial,
            plan_lineage: plan.base_lineage.clone(),
            state_serial: loaded.serial,
            state_lineage: loaded.lineage.clone(),
        });
    }

    let mut working = loaded.clone();
    if working.serial == 0 {
        working.lineage = plan.base_lineage.clone();
    }
    let planned: BTreeSet<&ResourceAddress> = plan.changes.iter().map(|c| &c.address).collect();
    working.resources.retain(|a, _| planned.contains(a));
    let mut resolved: BTreeMap<ResourceAddress, Attributes> = BTreeMap::new();
    for c in &plan.changes {
        if c.address.is_data() {
            if c.action == Action::NoOp {
                resolved.insert(c.address.clone(), c.after.clone().unwrap_or_default());
            }
            continue;
        }
        if let (Some(before), Some(r)) = (&c.before, working.resources.get_mut(&c.address)) {
            r.attributes = before.clone();
            if c.action == Action::NoOp {
                let deps: Vec<_> = c.dependencies.iter().filter(|d| !d.is_data()).cloned().collect();
                r.dependencies = deps;
            }
        }
    }
    for (a, r) in &working.resources {
        resolved.insert(a.clone(), r.attributes.clone());
    }

    let schedule = build_schedule(plan, &loaded);
    let parallelism = opts.parallelism.max(1);
    let emit = |event: ApplyEvent| {
        log::info!("{event}");
        if let Some(observer) = &opts.observer {
            observer(&event);
        }
    };

    let mut remaining: BTreeMap<StepId, usize> = schedule
        .waits_on
        .iter()
        .map(|(s, w)| (*s, w.len()))
        .collect();
    let mut dependents: BTreeMap<StepId, Vec<StepId>> = BTreeMap::new();
    for (s, waits) in &schedule.waits_on {
        for w in waits {
            dependents.entry(*w).or_default().push(*s);
        }
    }
    let mut ready: BTreeSet<StepId> = remaining
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(s, _)| *s)
        .collect();
    let mut failed_steps: BTreeMap<usize, String> = BTreeMap::new();
    let mut skipped_steps: BTreeSet<StepId> = BTreeSet::new();
    let mut done_steps: BTreeSet<StepId> = BTreeSet::new();
    let mut outcome_ids: BTreeMap<usize, Option<String>> = BTreeMap::new();

    let (tx, rx) = mpsc::channel::<(StepId, StepResult)>();
    std::thread::scope(|scope| {
        let mut in_flight = 0usize;
        loop {
            while in_flight < parallelism {
                let Some(step) = ready.pop_first() else { break };
                let (i, phase) = step;
                let change = &plan.changes[i];
                let provider = match providers.for_type(&change.address.type_name) {
                    Ok(p) => p.clone(),
                    Err(e) => {
                        tx.send((step, StepResult::Err(e.to_string()))).expect("receiver alive");
                        in_flight += 1;
                        continue;
                    }
                };
                let prior_id = working.resources.get(&change.address).map(|r| r.id.clone());
                let resolved_change = match phase {
                    Phase::Apply => match resolve_unknowns(change, &resolved) {
                        Ok(c) => c,
                        Err(e) => {
                            tx.send((step, StepResult::Err(e.to_string()))).expect("receiver alive");
                            in_flight += 1;
                            continue;
                        }
                    },
                    Phase::Destroy => change.clone(),
                };
                let tx = tx.clone();
                in_flight += 1;
                scope.spawn(move || {
                    let result = match phase {
                        Phase::Destroy => {
                            let id = prior_id.unwrap_or_default();
                            run_destroy(&resolved_change, provider.as_ref(), &id)
                        }
                        Phase::Apply => {
                            let id = match resolved_change.action {
                                Action::Update => prior_id.as_deref(),
                                _ => None,
                            };
                            run_apply(&resolved_change, provider.as_ref(), id)
                        }
                    };
                    let msg = match result {
                        Ok(outcome) => StepResult::Ok(outcome),
                        Err(StepError::Provider(ProviderError::PartialCreate { id, attributes, message })) => {
                            StepResult::Partial(resource_state(&resolved_change, id, attributes), message)
                        }
                        Err(e) => StepResult::Err(e.to_string()),
                    };
                    let _ = tx.send((step, msg));
                });
            }
            if in_flight == 0 {
                break;
            }
            let ((i, phase), result) = rx.recv().expect("workers hold senders");
            in_flight -= 1;
            let change = &plan.changes[i];
            let ok = match result {
                StepResult::Ok(outcome) => {
                    match outcome {
                        ChangeOutcome::Applied(rs) => {
                            resolved.insert(change.address.clone(), rs.attributes.clone());
                            outcome_ids.insert(i, Some(rs.id.clone()));
                            working.resources.insert(change.address.clone(), rs);
                        }
                        ChangeOutcome::Deleted => {
                            let old = working.resources.remove(&change.address);
                            resolved.remove(&change.address);
                            outcome_ids
                                .entry(i)
                                .or_insert_with(|| old.map(|r| r.id));
                        }
                        ChangeOutcome::Read(attrs) => {
                            resolved.insert(change.address.clone(), attrs);
                            outcome_ids.insert(i, None);
                        }
                    }
                    true
                }
                StepResult::Partial(rs, message) => {
                    let error = format!("created `{}` but then failed: {message}", rs.id);
                    working.resources.insert(change.address.clone(), rs);
                    failed_steps.insert(i, error);
                    false
                }
                StepResult::Err(error) => {
                    failed_steps.insert(i, error);
                    false
                }
            };
            let step = (i, phase);
            if ok {
                done_steps.insert(step);
                for d in dependents.get(&step).into_iter().flatten() {
                    let n = remaining.get_mut(d).expect("step");
                    *n -= 1;
                    if *n == 0 && !skipped_steps.contains(d) {
                        ready.insert(*d);
                    }
                }
                let all_done = [Phase::Destroy, Phase::Apply]
                    .iter()
                    .all(|p| !schedule.steps.contains(&(i, *p)) || done_steps.contains(&(i, *p)));
                if all_done {
                    emit(ApplyEvent::Done {
                        address: change.address.clone(),
                        action: change.action,
                        id: outcome_ids.get(&i).cloned().flatten(),
                    });
                }
            } else {
                emit(ApplyEvent::Failed {
                    address: change.address.clone(),
                    action: change.action,
                    error: failed_steps[&i].clone(),
                });
                let mut stack: Vec<StepId> = dependents.get(&step).cloned().unwrap_or_default();
                while let Some(s) = stack.pop() {
                    if skipped_steps.insert(s) {
                        ready.remove(&s);
                        stack.extend(dependents.get(&s).into_iter().flatten().copied());
                    }
                }
            }
        }
    });

    let mut report = ApplyReport {
        succeeded: vec![],
        failed: vec![],
        skipped: vec![],
        duration: Duration::ZERO,
        final_serial: loaded.serial,
    };
    let changed_indices: BTreeSet<usize> = schedule.steps.iter().map(|(i, _)| *i).collect();
    for i in changed_indices {
        let change = &plan.changes[i];
        if let Some(error) = failed_steps.get(&i) {
            report.failed.push((change.address.clone(), error.clone()));
        } else if [Phase::Destroy, Phase::Apply]
            .iter()
            .all(|p| !schedule.steps.contains(&(i, *p)) || done_steps.contains(&(i, *p)))
        {
            report.succeeded.push((change.address.clone(), change.action));
        } else {
            emit(ApplyEvent::Skipped {
                address: change.address.clone(),
                action: change.action,
            });
            report.skipped.push(change.address.clone());
        }
    }

    if working != loaded {
        match lock.write_state(&working) {
            Ok(serial) => report.final_serial = serial,
            Err(source) => {
                report.duration = started.elapsed();
                return Err(ExecError::Persist {
                    report: Box::new(report),
                    source,
                });
            }
        }
    }
    report.duration = started.elapsed();
    Ok(report)
}
