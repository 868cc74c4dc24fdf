//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{fixture, Outcome, Workspace};
use microform::address::ResourceAddress;
use microform::config::{load_directory, load_str, ConfigDocument};
use microform::exec::{apply, ApplyOptions, ApplyReport};
use microform::graph::build_graph;
use microform::plan::{diff, plan_to_json};
use microform::provider::inmem::{InMem, InMemState, NODE};
use microform::provider::{ConfiguredProviders, ProviderHandle, Registry};
use microform::state::server::StateServer;
use microform::state::{HttpBackend, LocalBackend, LockInfo, LockOperation, ResourceState, StateLock};
use microform::{Action, Backend, Plan, StateSnapshot, Value};
use mockcloud::Collection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MINI_CLUSTER_EXPECTED_ADDS: usize = 6;
const MINI_CLUSTER_EXPECTED_OBJECTS: [(Collection, usize); 5] = [
    (Collection::Vpcs, 1),
    (Collection::Subnets, 1),
    (Collection::SecurityGroups, 1),
    (Collection::Instances, 3),
    (Collection::LoadBalancers, 1),
];
const MINI_CLUSTER_WALL_LIMIT: Duration = Duration::from_secs(10);
const SMALL_UNIVERSE_MAX_RESOURCES: usize = 5;
const SMALL_UNIVERSE_REQUIRED_AGREEMENT: f64 = 1.0;
const CONVERGENCE_CASES: u64 = 200;
const CONVERGENCE_REQUIRED: u64 = 200;
const ORDERING_FIXTURES: u64 = 50;
const ORDERING_MAX_NODES: usize = 50;
const ORDERING_CALL_DELAY: Duration = Duration::from_millis(1);
const LOCK_ATTEMPTS: usize = 16;
const LOCK_WINNERS: usize = 1;
const SEQUENTIAL_APPLIES: u64 = 10;

type Check = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("mini-cluster end-to-end", mini_cluster),
        ("no-op recognition for every resource type", noop_recognition),
        ("diff oracle over the small universe", diff_oracle),
        ("convergence", convergence),
        ("ordering safety and parallelism bound", ordering_safety),
        ("failure containment", failure_containment),
        ("remote state exclusion and serials", remote_state),
        ("native/JSON plan equivalence", form_equivalence),
        ("destroy completeness", destroy_completeness),
        ("drift detection", drift_detection),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

/// Collects named sub-checks; fails if any of them failed.
struct Checks(Vec<(bool, String)>);

impl Checks {
    fn new() -> Self {
        Checks(Vec::new())
    }

    fn check(&mut self, ok: bool, text: impl Into<String>) {
        self.0.push((ok, text.into()));
    }

    fn finish(self) -> Check {
        let text = self
            .0
            .iter()
            .map(|(ok, t)| if *ok { t.clone() } else { format!("[FAILED] {t}") })
            .collect::<Vec<_>>()
            .join("; ");
        if self.0.iter().all(|(ok, _)| *ok) {
            Ok(text)
        } else {
            Err(text)
        }
    }
}

fn summary_numbers(line: &str) -> Vec<usize> {
    line.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().unwrap())
        .collect()
}

fn plan_line(out: &Outcome) -> String {
    out.out
        .lines()
        .find(|l| l.starts_with("Plan: "))
        .unwrap_or("")
        .to_string()
}

fn apply_line(out: &Outcome) -> String {
    out.out
        .lines()
        .find(|l| l.starts_with("Apply complete: ") || l.starts_with("Apply failed: "))
        .unwrap_or("")
        .to_string()
}

// 1
fn mini_cluster() -> Check {
    let started = Instant::now();
    let server = mockcloud::spawn("127.0.0.1:0").unwrap();
    let ws = Workspace::from_fixture("mini-cluster").with_endpoint(&server.url());
    let mut c = Checks::new();

    let plan = ws.run(&["plan", "-detailed-exitcode"]);
    let adds = summary_numbers(&plan_line(&plan)).first().copied().unwrap_or(0);
    c.check(
        adds == MINI_CLUSTER_EXPECTED_ADDS,
        format!("plan adds {adds} (expected {MINI_CLUSTER_EXPECTED_ADDS})"),
    );

    let applied = ws.run(&["apply", "-auto-approve"]);
    let added = summary_numbers(&apply_line(&applied)).first().copied().unwrap_or(0);
    c.check(applied.code == 0, format!("apply exit {}", applied.code));
    c.check(
        added == MINI_CLUSTER_EXPECTED_ADDS,
        format!("apply added {added} (expected {MINI_CLUSTER_EXPECTED_ADDS})"),
    );

    let listing: Vec<(Collection, usize)> = MINI_CLUSTER_EXPECTED_OBJECTS
        .iter()
        .map(|(coll, _)| (*coll, server.cloud().list(*coll).len()))
        .collect();
    c.check(
        listing == MINI_CLUSTER_EXPECTED_OBJECTS,
        format!(
            "listing {}",
            listing.iter().map(|(k, n)| format!("{n} {k}")).collect::<Vec<_>>().join(", ")
        ),
    );

    let again = ws.run(&["plan", "-detailed-exitcode"]);
    c.check(
        again.code == 0 && plan_line(&again) == "Plan: 0 to add, 0 to change, 0 to destroy.",
        format!("re-plan `{}`", plan_line(&again)),
    );
    let elapsed = started.elapsed();
    c.check(
        elapsed < MINI_CLUSTER_WALL_LIMIT,
        format!("{:.2}s < {}s", elapsed.as_secs_f64(), MINI_CLUSTER_WALL_LIMIT.as_secs()),
    );
    c.finish()
}

// 2
fn noop_recognition() -> Check {
    let server = mockcloud::spawn("127.0.0.1:0").unwrap();
    let ws = Workspace::from_fixture("mini-cluster").with_endpoint(&server.url());
    for entry in std::fs::read_dir(fixture("files", "native")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), ws.path().join("files.tf")).unwrap();
    }
    ws.write(
        "data.tf",
        "data \"memcloud_vpc\" \"existing\" {\n  id = memcloud_vpc.main.id\n}\n",
    );
    let applied = ws.run(&["apply", "-auto-approve"]);
    if applied.code != 0 {
        return Err(format!("apply failed: {}", applied.err));
    }

    let doc = load_directory(ws.path(), &BTreeMap::from([("endpoint".to_string(), Value::from(server.url()))])).unwrap();
    let providers = Registry::builtin()
        .configure_all(&doc, &microform::provider::ProviderContext { working_dir: ws.path().to_path_buf() })
        .unwrap();
    let state = ws.state();
    let plan = microform::plan::diff_with_data(&doc, &state, &providers).unwrap();

    let registry = Registry::builtin();
    let all_types: BTreeSet<String> = ["localfs", "memcloud"]
        .iter()
        .flat_map(|p| registry.schema(p).unwrap().resource_types.into_keys())
        .collect();
    let noop_types: BTreeSet<String> = plan
        .changes
        .iter()
        .filter(|ch| ch.action == Action::NoOp && !ch.address.is_data())
        .map(|ch| ch.address.type_name.clone())
        .collect();
    let non_noop: Vec<String> = plan
        .changes
        .iter()
        .filter(|ch| ch.action != Action::NoOp)
        .map(|ch| format!("{} {}", ch.action, ch.address))
        .collect();
    if non_noop.is_empty() && noop_types == all_types {
        Ok(format!("{} changes, all NoOp, covering {} types", plan.changes.len(), all_types.len()))
    } else {
        Err(format!("non-noop: {non_noop:?}; uncovered: {:?}", all_types.difference(&noop_types).collect::<Vec<_>>()))
    }
}

/// Per-resource situations in the small universe: which side holds the
/// resource and, when both do, which attributes differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Situation {
    Neither,
    ConfigOnly,
    StateOnly,
    Equal,
    PlainChanged,
    ForceNewChanged,
    BothChanged,
}

const SITUATIONS: [Situation; 7] = [
    Situation::Neither,
    Situation::ConfigOnly,
    Situation::StateOnly,
    Situation::Equal,
    Situation::PlainChanged,
    Situation::ForceNewChanged,
    Situation::BothChanged,
];

/// The brute-force classification: (action, changed attributes), or None
/// when the resource should not appear in the plan at all.
fn oracle(s: Situation) -> Option<(Action, Vec<&'static str>)> {
    match s {
        Situation::Neither => None,
        Situation::ConfigOnly => Some((Action::Create, vec!["name", "tag", "value"])),
        Situation::StateOnly => Some((Action::Delete, vec![])),
        Situation::Equal => Some((Action::NoOp, vec![])),
        Situation::PlainChanged => Some((Action::Update, vec!["value"])),
        Situation::ForceNewChanged => Some((Action::Replace, vec!["tag"])),
        Situation::BothChanged => Some((Action::Replace, vec!["tag", "value"])),
    }
}

fn inmem_providers(state: &Arc<InMemState>) -> ConfiguredProviders {
    ConfiguredProviders::new(BTreeMap::from([(
        "inmem".to_string(),
        Arc::new(InMem::new(state.clone())) as ProviderHandle,
    )]))
}

fn node_state(i: usize, value: &str, tag: &str) -> ResourceState {
    let name = format!("r{i}");
    ResourceState {
        type_name: NODE.to_string(),
        name: name.clone(),
        provider: "inmem".to_string(),
        id: format!("node-{i}"),
        attributes: BTreeMap::from([
            ("id".to_string(), Value::from(format!("node-{i}"))),
            ("name".to_string(), Value::from(name)),
            ("tag".to_string(), Value::from(tag)),
            ("value".to_string(), Value::from(value)),
        ]),
        dependencies: vec![],
    }
}

// 3
fn diff_oracle() -> Check {
    let schemas = inmem_providers(&InMemState::new()).schemas().clone();
    let mut total = 0u64;
    let mut agree = 0u64;
    let mut first_mismatch = None;
    for n in 1..=SMALL_UNIVERSE_MAX_RESOURCES {
        let combos = SITUATIONS.len().pow(n as u32);
        for mut code in 0..combos {
            let mut situations = Vec::with_capacity(n);
            for _ in 0..n {
                situations.push(SITUATIONS[code % SITUATIONS.len()]);
                code /= SITUATIONS.len();
            }
            let mut source = String::from("provider \"inmem\" {}\n");
            let mut state = StateSnapshot::empty();
            state.serial = 1;
            for (i, s) in situations.iter().enumerate() {
                if matches!(s, Situation::ConfigOnly | Situation::Equal | Situation::PlainChanged | Situation::ForceNewChanged | Situation::BothChanged) {
                    source.push_str(&format!(
                        "resource \"inmem_node\" \"r{i}\" {{\n  name = \"r{i}\"\n  value = \"v\"\n  tag = \"t\"\n}}\n"
                    ));
                }
                let stored = match s {
                    Situation::Neither | Situation::ConfigOnly => None,
                    Situation::StateOnly | Situation::Equal => Some(("v", "t")),
                    Situation::PlainChanged => Some(("old", "t")),
                    Situation::ForceNewChanged => Some(("v", "old")),
                    Situation::BothChanged => Some(("old", "old")),
                };
                if let Some((value, tag)) = stored {
                    let r = node_state(i, value, tag);
                    state.resources.insert(r.address(), r);
                }
            }
            let doc = ConfigDocument::from_blocks(load_str(&source).unwrap(), BTreeMap::new()).unwrap();
            let plan = diff(&doc, &state, &schemas).unwrap();
            let got: BTreeMap<ResourceAddress, (Action, Vec<String>)> = plan
                .changes
                .iter()
                .map(|ch| (ch.address.clone(), (ch.action, ch.changed_paths.clone())))
                .collect();
            let want: BTreeMap<ResourceAddress, (Action, Vec<String>)> = situations
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    oracle(*s).map(|(a, paths)| {
                        (
                            ResourceAddress::managed(NODE, format!("r{i}")),
                            (a, paths.into_iter().map(String::from).collect()),
                        )
                    })
                })
                .collect();
            total += 1;
            if got == want {
                agree += 1;
            } else if first_mismatch.is_none() {
                first_mismatch = Some(format!("{situations:?}: got {got:?}, want {want:?}"));
            }
        }
    }
    let rate = agree as f64 / total as f64;
    let detail = format!("{agree}/{total} combinations agree (n = 1..={SMALL_UNIVERSE_MAX_RESOURCES}, 7 situations each)");
    if rate >= SMALL_UNIVERSE_REQUIRED_AGREEMENT {
        Ok(detail)
    } else {
        Err(format!("{detail}; first mismatch {}", first_mismatch.unwrap_or_default()))
    }
}

/// A random configuration over nodes `n0..n{pool}`; references only point
/// at lower-numbered nodes, so the graph is acyclic.
fn random_config(rng: &mut ChaCha8Rng, pool: usize, ref_chance: f64) -> String {
    let mut present = Vec::new();
    let mut source = String::from("provider \"inmem\" {}\n");
    for i in 0..pool {
        if !rng.gen_bool(0.7) {
            continue;
        }
        let refs: Vec<String> = present
            .iter()
            .filter(|_| rng.gen_bool(ref_chance))
            .map(|j: &usize| format!("inmem_node.n{j}.id"))
            .collect();
        let value = ["x", "y", "z"][rng.gen_range(0..3)];
        let tag = ["p", "q"][rng.gen_range(0..2)];
        let name = format!("n{i}{}", ["", "-b"][rng.gen_range(0..2)]);
        source.push_str(&format!("resource \"inmem_node\" \"n{i}\" {{\n  name = \"{name}\"\n"));
        if rng.gen_bool(0.8) {
            source.push_str(&format!("  value = \"{value}\"\n"));
        }
        source.push_str(&format!("  tag = \"{tag}\"\n"));
        if !refs.is_empty() {
            source.push_str(&format!("  refs = [{}]\n", refs.join(", ")));
        }
        source.push_str("}\n");
        present.push(i);
    }
    source
}

fn document(source: &str) -> ConfigDocument {
    ConfigDocument::from_blocks(load_str(source).unwrap(), BTreeMap::new()).unwrap()
}

fn plan_and_apply(
    doc: &ConfigDocument,
    backend: &Arc<LocalBackend>,
    providers: &ConfiguredProviders,
    parallelism: usize,
) -> (Plan, ApplyReport) {
    let lock = StateLock::acquire(backend.clone(), "acceptance", LockOperation::Apply).unwrap();
    let state = lock.read_state().unwrap();
    let plan = diff(doc, &state, providers.schemas()).unwrap();
    let report = apply(&plan, providers, &lock, &ApplyOptions::with_parallelism(parallelism)).unwrap();
    lock.release().unwrap();
    (plan, report)
}

// 4
fn convergence() -> Check {
    let mut converged = 0;
    let mut first_failure = None;
    for seed in 0..CONVERGENCE_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(LocalBackend::new(dir.path().join("s.tfstate")));
        let cloud = InMemState::new();
        let providers = inmem_providers(&cloud);
        let before = document(&random_config(&mut rng, 8, 0.3));
        let after = document(&random_config(&mut rng, 8, 0.3));
        plan_and_apply(&before, &backend, &providers, 4);
        let (_, report) = plan_and_apply(&after, &backend, &providers, 4);
        let state = backend.read_state().unwrap();
        let replan = diff(&after, &state, providers.schemas()).unwrap();
        if report.is_success() && replan.is_noop() {
            converged += 1;
        } else if first_failure.is_none() {
            let left: Vec<String> = replan
                .changes
                .iter()
                .filter(|c| c.action != Action::NoOp)
                .map(|c| format!("{} {}", c.action, c.address))
                .collect();
            first_failure = Some(format!("seed {seed}: failed {:?}, re-plan {left:?}", report.failed));
        }
    }
    let detail = format!("{converged}/{CONVERGENCE_CASES} re-plans all-NoOp");
    if converged >= CONVERGENCE_REQUIRED {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", first_failure.unwrap_or_default()))
    }
}

// 5
fn ordering_safety() -> Check {
    let mut violations = Vec::new();
    let mut total_nodes = 0;
    let mut saturated = 0;
    let mut highest = 0;
    for seed in 0..ORDERING_FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let n = rng.gen_range(1..=ORDERING_MAX_NODES);
        let parallelism = rng.gen_range(1..=8);
        let mut source = String::from("provider \"inmem\" {}\n");
        let mut deps: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for i in 0..n {
            let mine: Vec<usize> = (0..i).filter(|_| rng.gen_bool((3.0 / n as f64).min(1.0))).collect();
            let refs: Vec<String> = mine.iter().map(|j| format!("inmem_node.d{j}.id")).collect();
            source.push_str(&format!(
                "resource \"inmem_node\" \"d{i}\" {{\n  name = \"d{i}\"\n  refs = [{}]\n}}\n",
                refs.join(", ")
            ));
            deps.insert(format!("d{i}"), mine.iter().map(|j| format!("d{j}")).collect());
        }
        total_nodes += n;
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(LocalBackend::new(dir.path().join("s.tfstate")));
        let cloud = InMemState::new();
        cloud.set_delay(ORDERING_CALL_DELAY);
        let providers = inmem_providers(&cloud);
        let (_, report) = plan_and_apply(&document(&source), &backend, &providers, parallelism);
        if !report.is_success() {
            violations.push(format!("seed {seed}: apply failed {:?}", report.failed));
            continue;
        }
        let calls: BTreeMap<String, (u64, u64)> = cloud
            .trace()
            .into_iter()
            .filter(|c| c.op == "create")
            .map(|c| (c.target, (c.start, c.end)))
            .collect();
        for (node, ds) in &deps {
            for d in ds {
                if calls[node].0 < calls[d].1 {
                    violations.push(format!("seed {seed}: {node} started before {d} finished"));
                }
            }
        }
        let peak = cloud.max_in_flight();
        if peak > parallelism {
            violations.push(format!("seed {seed}: {peak} in flight with parallelism {parallelism}"));
        }
        highest = highest.max(peak);
        if peak == parallelism {
            saturated += 1;
        }
    }
    if violations.is_empty() {
        Ok(format!(
            "{ORDERING_FIXTURES} DAGs, {total_nodes} nodes, no early starts; \
             in-flight never above the limit, reached it in {saturated} runs, peak {highest}"
        ))
    } else {
        Err(violations.join("; "))
    }
}

/// Every node with a path to `target` along dependency edges, found by
/// trying each node independently.
fn brute_force_descendants(edges: &BTreeSet<(String, String)>, target: &str) -> BTreeSet<String> {
    let nodes: BTreeSet<&String> = edges.iter().flat_map(|(a, b)| [a, b]).collect();
    let mut out = BTreeSet::new();
    for start in nodes {
        if start == target {
            continue;
        }
        let mut stack = vec![start.clone()];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == target {
                out.insert(start.clone());
                break;
            }
            if seen.insert(n.clone()) {
                stack.extend(edges.iter().filter(|(a, _)| *a == n).map(|(_, b)| b.clone()));
            }
        }
    }
    out
}

fn event_addresses(out: &Outcome, marker: &str) -> BTreeSet<String> {
    out.out
        .lines()
        .filter(|l| l.contains(marker))
        .filter_map(|l| l.split_once(": ").map(|(a, _)| a.to_string()))
        .collect()
}

// 6
fn failure_containment() -> Check {
    let server = mockcloud::spawn("127.0.0.1:0").unwrap();
    server.cloud().add_fault(mockcloud::Fault {
        collection: Collection::Subnets,
        operation: mockcloud::Operation::Create,
        count: 1,
        status: 500,
    });
    let ws = Workspace::from_fixture("mini-cluster").with_endpoint(&server.url());
    let doc = load_directory(ws.path(), &BTreeMap::new()).unwrap();
    let edges: BTreeSet<(String, String)> = build_graph(&doc)
        .unwrap()
        .edges()
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();

    let applied = ws.run(&["apply", "-auto-approve"]);
    let failed = event_addresses(&applied, "... failed");
    let skipped = event_addresses(&applied, "... skipped");
    let expected_skipped = brute_force_descendants(&edges, "memcloud_subnet.app");

    let mut c = Checks::new();
    c.check(applied.code == 1, format!("exit {}", applied.code));
    c.check(
        failed == BTreeSet::from(["memcloud_subnet.app".to_string()]),
        format!("failed {failed:?}"),
    );
    c.check(
        skipped == expected_skipped,
        format!("skipped {} = brute-force descendants {}", skipped.len(), expected_skipped.len()),
    );
    let follow = ws.run(&["plan"]);
    let proposed: BTreeSet<String> = follow.change_lines().into_iter().collect();
    let expected: BTreeSet<String> = failed
        .union(&skipped)
        .map(|a| format!("+ create {a}"))
        .collect();
    c.check(proposed == expected, format!("follow-up plan proposes {} creates for failed+skipped", proposed.len()));
    c.finish()
}

// 7
fn remote_state() -> Check {
    let state_dir = tempfile::tempdir().unwrap();
    let server = StateServer::start(LocalBackend::new(state_dir.path().join("remote.tfstate")), "127.0.0.1:0").unwrap();
    let url = server.url();
    let mut c = Checks::new();

    let results: Vec<Result<String, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..LOCK_ATTEMPTS)
            .map(|i| {
                let url = url.clone();
                s.spawn(move || {
                    HttpBackend::new(url)
                        .lock(&LockInfo::new(format!("client-{i}"), LockOperation::Apply))
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let winners: Vec<&String> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    c.check(
        winners.len() == LOCK_WINNERS,
        format!("{}/{LOCK_ATTEMPTS} concurrent lock attempts won", winners.len()),
    );
    let holder = HttpBackend::new(url.clone());

    let mut ws = Workspace::empty();
    ws.write(
        "main.tf",
        "variable \"content\" {}\nprovider \"localfs\" {}\nresource \"localfs_file\" \"f\" {\n  path = \"f.txt\"\n  content = var.content\n}\n",
    );
    ws.extra = vec!["-backend=http".into(), format!("-backend-url={url}")];
    let blocked = ws.run(&["apply", "-auto-approve", "-var", "content=blocked"]);
    c.check(blocked.code == 1, format!("apply during held lock exits {}", blocked.code));
    if let Some(token) = winners.first() {
        holder.unlock(token).unwrap();
    }

    let mut serials = Vec::new();
    let mut lineages = BTreeSet::new();
    for i in 1..=SEQUENTIAL_APPLIES {
        let out = ws.run(&["apply", "-auto-approve", "-var", &format!("content=v{i}")]);
        if out.code != 0 {
            c.check(false, format!("apply {i}: {}", out.err));
            break;
        }
        let state = holder.read_state().unwrap();
        serials.push(state.serial);
        lineages.insert(state.lineage);
    }
    let expected: Vec<u64> = (1..=SEQUENTIAL_APPLIES).collect();
    c.check(serials == expected, format!("serials {serials:?}"));
    c.check(lineages.len() == 1, format!("{} lineage(s)", lineages.len()));
    c.finish()
}

/// Serialized plan with the timestamp removed.
fn plan_bytes(plan: &Plan) -> String {
    let mut json = plan_to_json(plan);
    json.as_object_mut().unwrap().remove("created_at");
    serde_json::to_string_pretty(&json).unwrap()
}

/// A state in which every resource of `plan` exists, with placeholder
/// values for whatever was unknown.
fn synthetic_state(plan: &Plan) -> StateSnapshot {
    let mut state = StateSnapshot::empty();
    state.serial = 3;
    for ch in &plan.changes {
        if ch.address.is_data() {
            continue;
        }
        let id = format!("id-{}", ch.address.name);
        let mut attrs: BTreeMap<String, Value> = ch
            .after
            .clone()
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| {
                let v = if v.contains_unknown() { Value::from(format!("x-{k}")) } else { v };
                (k, v)
            })
            .collect();
        attrs.insert("id".into(), Value::from(id.clone()));
        attrs.insert("content".into(), Value::from("drifted"));
        let r = ResourceState {
            type_name: ch.address.type_name.clone(),
            name: ch.address.name.clone(),
            provider: ch.address.provider_name().to_string(),
            id,
            attributes: attrs,
            dependencies: ch.dependencies.clone(),
        };
        state.resources.insert(ch.address.clone(), r);
    }
    state
}

// 8
fn form_equivalence() -> Check {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut names: Vec<String> = std::fs::read_dir(&root)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("native").is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let registry = Registry::builtin();
    let mut compared = 0;
    for name in &names {
        let native = load_directory(&fixture(name, "native"), &BTreeMap::new()).map_err(|e| e.to_string())?;
        let json = load_directory(&fixture(name, "json"), &BTreeMap::new()).map_err(|e| e.to_string())?;
        let schemas = registry.schemas_for(&native).map_err(|e| e.to_string())?;
        let empty = StateSnapshot::empty();
        let from_native = diff(&native, &empty, &schemas).map_err(|e| e.to_string())?;
        let states = [empty.clone(), synthetic_state(&from_native)];
        for state in &states {
            let a = plan_bytes(&diff(&native, state, &schemas).unwrap());
            let b = plan_bytes(&diff(&json, state, &schemas).unwrap());
            if a != b {
                return Err(format!("{name}: plans differ against state serial {}", state.serial));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} plan pairs byte-identical across {} fixtures", names.len()))
}

// 9
fn destroy_completeness() -> Check {
    let server = mockcloud::spawn("127.0.0.1:0").unwrap();
    let ws = Workspace::from_fixture("mini-cluster").with_endpoint(&server.url());
    let applied = ws.run(&["apply", "-auto-approve"]);
    if applied.code != 0 {
        return Err(format!("apply failed: {}", applied.err));
    }
    let before = ws.state();
    let journal_start = server.cloud().journal().len();
    let destroyed = ws.run(&["destroy", "-auto-approve"]);

    let mut c = Checks::new();
    c.check(destroyed.code == 0, format!("exit {}, `{}`", destroyed.code, apply_line(&destroyed)));
    let remaining: usize = Collection::ALL.iter().map(|k| server.cloud().list(*k).len()).sum();
    c.check(remaining == 0, format!("{remaining} objects left"));
    c.check(ws.state().resources.is_empty(), format!("{} resources in state", ws.state().resources.len()));

    let by_id: BTreeMap<&str, &ResourceAddress> = before.resources.iter().map(|(a, r)| (r.id.as_str(), a)).collect();
    let order: Vec<&ResourceAddress> = server.cloud().journal()[journal_start..]
        .iter()
        .filter(|e| e.method == "DELETE" && e.status == 204)
        .filter_map(|e| e.path.rsplit('/').next().and_then(|id| by_id.get(id).copied()))
        .collect();
    let position: BTreeMap<&ResourceAddress, usize> = order.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let mut bad = Vec::new();
    for (addr, r) in &before.resources {
        for dep in &r.dependencies {
            if position.get(addr) >= position.get(dep) {
                bad.push(format!("{addr} deleted after {dep}"));
            }
        }
    }
    c.check(
        bad.is_empty() && order.len() == before.resources.len(),
        format!("{} deletes, dependents first ({})", order.len(), if bad.is_empty() { "valid".into() } else { bad.join(", ") }),
    );
    c.finish()
}

// 10
fn drift_detection() -> Check {
    let server = mockcloud::spawn("127.0.0.1:0").unwrap();
    let ws = Workspace::empty().with_endpoint(&server.url());
    ws.write(
        "main.tf",
        r#"
variable "endpoint" {}
provider "memcloud" {
  endpoint = var.endpoint
}
resource "memcloud_vpc" "main" {
  cidr = "10.0.0.0/16"
}
resource "memcloud_subnet" "app" {
  vpc_id = memcloud_vpc.main.id
  cidr   = "10.0.1.0/24"
}
resource "memcloud_security_group" "web" {
  vpc_id = memcloud_vpc.main.id
}
resource "memcloud_instance" "web" {
  subnet_id          = memcloud_subnet.app.id
  image              = "debian-12"
  security_group_ids = [memcloud_security_group.web.id]
}
"#,
    );
    let applied = ws.run(&["apply", "-auto-approve"]);
    if applied.code != 0 {
        return Err(format!("apply failed: {}", applied.err));
    }
    let id = ws.state().resources[&ResourceAddress::managed("memcloud_instance", "web")].id.clone();
    let deleted = server.cloud().handle("DELETE", &format!("/v1/instances/{id}"), b"");

    let mut c = Checks::new();
    c.check(deleted.status == 204, format!("out-of-band delete {}", deleted.status));
    let refreshed = ws.run(&["plan"]);
    c.check(
        refreshed.change_lines() == ["+ create memcloud_instance.web"],
        format!("refresh plan {:?}", refreshed.change_lines()),
    );
    let stale = ws.run(&["plan", "-refresh=false"]);
    c.check(
        stale.code == 0 && stale.change_lines().is_empty(),
        format!("-refresh=false plan {:?}", stale.change_lines()),
    );
    c.finish()
}

