use std::collections::BTreeMap;

use microform::config::{format_expression, load_str, Expression};
use microform::plan::{diff, plan_destroy, plan_from_json, plan_to_json};
use microform::provider::inmem::{InMem, InMemState};
use microform::provider::{AttributeSpec, ProviderSchema, Schemas, ValueKind};
use microform::state::ResourceState;
use microform::{Action, Attributes, ConfigDocument, Registry, ResourceAddress, StateSnapshot, Value};
use proptest::prelude::*;

const ATTRS: [&str; 3] = ["a", "b", "c"];

fn toy_schemas(force_new: [bool; 3]) -> Schemas {
    let mut specs: Vec<AttributeSpec> = ATTRS
        .iter()
        .zip(force_new)
        .map(|(name, f)| {
            let s = AttributeSpec::required(name, ValueKind::String);
            if f {
                s.force_new()
            } else {
                s
            }
        })
        .collect();
    specs.push(AttributeSpec::computed("id", ValueKind::String));
    BTreeMap::from([(
        "toy".to_string(),
        ProviderSchema {
            provider_name: "toy".into(),
            resource_types: BTreeMap::from([("toy_thing".to_string(), specs)]),
            ..Default::default()
        },
    )])
}

fn toy_state(attrs: Attributes) -> StateSnapshot {
    let mut state = StateSnapshot::empty();
    state.serial = 4;
    let mut attributes = attrs;
    attributes.insert("id".into(), Value::String("t-1".into()));
    state.resources.insert(
        ResourceAddress::managed("toy_thing", "x"),
        ResourceState {
            type_name: "toy_thing".into(),
            name: "x".into(),
            provider: "toy".into(),
            id: "t-1".into(),
            attributes,
            dependencies: vec![],
        },
    );
    state
}

fn strings(pairs: &[(&str, &str)]) -> Attributes {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect()
}

// All 64 combinations of (attribute differs, attribute forces replacement)
// over three attributes. Expected action: nothing differs gives noop; any
// differing force-new attribute gives replace; otherwise update.
#[test]
fn exhaustive_diff_oracle() {
    for mask in 0u32..64 {
        let differs: [bool; 3] = std::array::from_fn(|i| mask >> i & 1 == 1);
        let force_new: [bool; 3] = std::array::from_fn(|i| mask >> (i + 3) & 1 == 1);

        let desired: Vec<(&str, &str)> = ATTRS
            .iter()
            .zip(differs)
            .map(|(n, d)| (*n, if d { "new" } else { "old" }))
            .collect();
        let body: String = desired.iter().map(|(k, v)| format!("  {k} = \"{v}\"\n")).collect();
        let src = format!("provider \"toy\" {{}}\nresource \"toy_thing\" \"x\" {{\n{body}}}\n");
        let doc = ConfigDocument::from_blocks(load_str(&src).unwrap(), BTreeMap::new()).unwrap();
        let state = toy_state(strings(&[("a", "old"), ("b", "old"), ("c", "old")]));

        let plan = diff(&doc, &state, &toy_schemas(force_new)).unwrap();
        assert_eq!(plan.changes.len(), 1);
        let change = &plan.changes[0];

        let changed: Vec<String> = ATTRS
            .iter()
            .zip(differs)
            .filter(|(_, d)| *d)
            .map(|(n, _)| n.to_string())
            .collect();
        let expected = if changed.is_empty() {
            Action::NoOp
        } else if (0..3).any(|i| differs[i] && force_new[i]) {
            Action::Replace
        } else {
            Action::Update
        };
        assert_eq!(change.action, expected, "mask {mask:06b}");
        assert_eq!(change.changed_paths, changed, "mask {mask:06b}");
        assert_eq!(plan.base_serial, 4);

        let s = plan.summary();
        let counts = match expected {
            Action::NoOp => (0, 0, 0),
            Action::Update => (0, 1, 0),
            _ => (1, 0, 1),
        };
        assert_eq!((s.add, s.change, s.destroy), counts, "mask {mask:06b}");
        if expected != Action::NoOp {
            let after = change.after.as_ref().unwrap();
            for (k, v) in &desired {
                assert_eq!(after[*k], Value::String(v.to_string()));
            }
        }
    }
}

#[test]
fn absent_and_orphaned() {
    let schemas = toy_schemas([false; 3]);
    let src = "provider \"toy\" {}\nresource \"toy_thing\" \"x\" {\n  a = \"1\"\n  b = \"2\"\n  c = \"3\"\n}\n";
    let doc = ConfigDocument::from_blocks(load_str(src).unwrap(), BTreeMap::new()).unwrap();
    let plan = diff(&doc, &StateSnapshot::empty(), &schemas).unwrap();
    assert_eq!(plan.changes[0].action, Action::Create);
    // computed attributes stay out of `after` until the provider reports them
    assert!(!plan.changes[0].after.as_ref().unwrap().contains_key("id"));

    let state = toy_state(strings(&[("a", "1"), ("b", "2"), ("c", "3")]));
    let plan = diff(&ConfigDocument::empty(), &state, &schemas).unwrap();
    assert_eq!(plan.changes[0].action, Action::Delete);
    assert!(plan.changes[0].after.is_none());

    let empty = diff(&ConfigDocument::empty(), &StateSnapshot::empty(), &schemas).unwrap();
    assert!(empty.changes.is_empty() && empty.is_noop());
}

#[test]
fn destroy_plans_delete_dependents_first() {
    let mut state = StateSnapshot::empty();
    for (name, deps) in [("a", vec![]), ("b", vec!["a"]), ("c", vec!["b", "a"])] {
        let address = ResourceAddress::managed("inmem_node", name);
        state.resources.insert(
            address,
            ResourceState {
                type_name: "inmem_node".into(),
                name: name.into(),
                provider: "inmem".into(),
                id: format!("id-{name}"),
                attributes: strings(&[("name", name)]),
                dependencies: deps
                    .into_iter()
                    .map(|d| ResourceAddress::managed("inmem_node", d))
                    .collect(),
            },
        );
    }
    let plan = plan_destroy(&state).unwrap();
    let order: Vec<String> = plan.changes.iter().map(|c| c.address.name.clone()).collect();
    assert_eq!(order, ["c", "b", "a"]);
    assert!(plan.changes.iter().all(|c| c.action == Action::Delete));
    assert!(plan.is_destroy);
}

fn chain_config(names: &[String], values: &[String]) -> String {
    let mut src = String::from("provider \"inmem\" {}\n");
    for (i, (n, v)) in names.iter().zip(values).enumerate() {
        src.push_str(&format!("resource \"inmem_node\" \"{n}\" {{\n  name  = \"{n}\"\n  value = {}\n", format_expression(&Expression::string(v))));
        if i > 0 {
            src.push_str(&format!("  refs  = [inmem_node.{}.id, \"${{inmem_node.{}.id}}-x\"]\n", names[i - 1], names[i - 1]));
        }
        src.push_str("}\n");
    }
    src
}

proptest! {
    // Plans with unknowns and deferred expressions survive the plan file.
    #[test]
    fn plan_file_round_trip(
        names in prop::collection::btree_set("[a-z]{1,5}", 1..6),
        seed in prop::collection::vec("[ -~]{0,6}", 6),
    ) {
        let names: Vec<String> = names.into_iter().collect();
        let doc = ConfigDocument::from_blocks(load_str(&chain_config(&names, &seed)).unwrap(), BTreeMap::new()).unwrap();
        let mut registry = Registry::new();
        registry.register("inmem", || Box::new(InMem::new(InMemState::new()))).unwrap();
        let schemas = registry.schemas_for(&doc).unwrap();
        let plan = diff(&doc, &StateSnapshot::empty(), &schemas).unwrap();
        prop_assert_eq!(plan.summary().add, names.len());
        let json = plan_to_json(&plan);
        let text = serde_json::to_string_pretty(&json).unwrap();
        let back = plan_from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(&back, &plan);
        let deferred: usize = plan.changes.iter().map(|c| c.deferred.len()).sum();
        prop_assert_eq!(deferred, names.len() - 1);
    }
}
