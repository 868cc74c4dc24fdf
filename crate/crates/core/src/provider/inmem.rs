//! An in-memory provider for tests and examples.
//!
//! One resource type, `inmem_node`, with attributes `name` (forces
//! replacement), `value`, `tag` (forces replacement), `refs` (list of
//! strings) and a computed `id`. The backing [`InMemState`] is shared, so a
//! test can keep a handle to it and inspect objects, the call trace and the
//! peak number of concurrent calls, or inject failures by node name.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{AttributeSpec, Created, Provider, ProviderContext, ProviderError, ProviderSchema, ValueKind};
use crate::value::{Attributes, Value};

pub const NODE: &str = "inmem_node";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub op: &'static str,
    /// The node's `name` for creates, its id otherwise.
    pub target: String,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Default)]
pub struct InMemState {
    objects: Mutex<BTreeMap<String, Attributes>>,
    next_id: AtomicU64,
    seq: AtomicU64,
    trace: Mutex<Vec<Call>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    fail_names: Mutex<BTreeSet<String>>,
    partial_names: Mutex<BTreeSet<String>>,
    delay: Mutex<Duration>,
}

fn locked<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl InMemState {
    pub fn new() -> Arc<Self> {
        Arc::new(InMemState::default())
    }

    pub fn objects(&self) -> BTreeMap<String, Attributes> {
        locked(&self.objects).clone()
    }

    /// Removes an object behind the engine's back.
    pub fn remove(&self, id: &str) -> Option<Attributes> {
        locked(&self.objects).remove(id)
    }

    /// Overwrites one attribute behind the engine's back.
    pub fn set_attribute(&self, id: &str, name: &str, value: Value) {
        if let Some(obj) = locked(&self.objects).get_mut(id) {
            obj.insert(name.to_string(), value);
        }
    }

    pub fn trace(&self) -> Vec<Call> {
        locked(&self.trace).clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Every create, update or delete touching a node named `name` fails.
    pub fn fail_on(&self, name: &str) {
        locked(&self.fail_names).insert(name.to_string());
    }

    /// Creating `name` stores the object, then reports a partial failure.
    pub fn partial_on(&self, name: &str) {
        locked(&self.partial_names).insert(name.to_string());
    }

    pub fn clear_faults(&self) {
        locked(&self.fail_names).clear();
        locked(&self.partial_names).clear();
    }

    /// Each call sleeps this long while counted as in flight.
    pub fn set_delay(&self, d: Duration) {
        *locked(&self.delay) = d;
    }

    fn call<T>(&self, op: &'static str, target: &str, f: impl FnOnce() -> T) -> T {
        let start = self.seq.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let delay = *locked(&self.delay);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let out = f();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let end = self.seq.fetch_add(1, Ordering::SeqCst);
        locked(&self.trace).push(Call {
            op,
            target: target.to_string(),
            start,
            end,
        });
        out
    }

    fn fails(&self, name: &str) -> bool {
        locked(&self.fail_names).contains(name)
    }
}

pub struct InMem {
    state: Arc<InMemState>,
}

impl InMem {
    pub fn new(state: Arc<InMemState>) -> Self {
        InMem { state }
    }
}

fn node_name(attrs: &Attributes) -> String {
    attrs
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string()
}

fn check_type(type_name: &str) -> Result<(), ProviderError> {
    if type_name == NODE {
        Ok(())
    } else {
        Err(ProviderError::UnsupportedType(type_name.to_string()))
    }
}

impl Provider for InMem {
    fn schema(&self) -> ProviderSchema {
        ProviderSchema {
            provider_name: "inmem".to_string(),
            config_attrs: vec![],
            resource_types: BTreeMap::from([(
                NODE.to_string(),
                vec![
                    AttributeSpec::required("name", ValueKind::String).force_new(),
                    AttributeSpec::optional("value", ValueKind::String),
                    AttributeSpec::optional("tag", ValueKind::String).force_new(),
                    AttributeSpec::optional("refs", ValueKind::StringList),
                    AttributeSpec::computed("id", ValueKind::String),
                ],
            )]),
            data_types: BTreeMap::new(),
        }
    }

    fn configure(&mut self, _config: &Attributes, _ctx: &ProviderContext) -> Result<(), ProviderError> {
        Ok(())
    }

    fn create(&self, type_name: &str, attrs: &Attributes) -> Result<Created, ProviderError> {
        check_type(type_name)?;
        let name = node_name(attrs);
        self.state.call("create", &name, || {
            if self.state.fails(&name) {
                return Err(ProviderError::Unavailable(format!("injected failure creating {name}")));
            }
            let n = self.state.next_id.fetch_add(1, Ordering::SeqCst) + 1;
            let id = format!("node-{n}");
            let mut stored = attrs.clone();
            stored.insert("id".to_string(), Value::from(id.as_str()));
            locked(&self.state.objects).insert(id.clone(), stored.clone());
            if locked(&self.state.partial_names).contains(&name) {
                return Err(ProviderError::PartialCreate {
                    id,
                    attributes: stored,
                    message: format!("injected failure after creating {name}"),
                });
            }
            Ok(Created { id, attributes: stored })
        })
    }

    fn read(&self, type_name: &str, id: &str) -> Result<Option<Attributes>, ProviderError> {
        check_type(type_name)?;
        self.state
            .call("read", id, || Ok(locked(&self.state.objects).get(id).cloned()))
    }

    fn update(&self, type_name: &str, id: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        check_type(type_name)?;
        self.state.call("update", id, || {
            let mut objects = locked(&self.state.objects);
            let current = objects
                .get_mut(id)
                .ok_or_else(|| ProviderError::NotFound(id.to_string()))?;
            if self.state.fails(&node_name(current)) {
                return Err(ProviderError::Unavailable(format!("injected failure updating {id}")));
            }
            for immutable in ["name", "tag"] {
                if attrs.get(immutable) != current.get(immutable) {
                    return Err(ProviderError::invalid(immutable, "cannot change in place"));
                }
            }
            let mut next = attrs.clone();
            next.insert("id".to_string(), Value::from(id));
            *current = next.clone();
            Ok(next)
        })
    }

    fn delete(&self, type_name: &str, id: &str) -> Result<(), ProviderError> {
        check_type(type_name)?;
        self.state.call("delete", id, || {
            let mut objects = locked(&self.state.objects);
            if let Some(obj) = objects.get(id) {
                if self.state.fails(&node_name(obj)) {
                    return Err(ProviderError::Unavailable(format!("injected failure deleting {id}")));
                }
            }
            objects.remove(id);
            Ok(())
        })
    }
}
