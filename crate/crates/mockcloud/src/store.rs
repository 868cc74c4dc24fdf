//! The simulated cloud: five collections of JSON objects, server-assigned
//! ids, referential integrity, fault injection and a request journal.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Vpcs,
    Subnets,
    SecurityGroups,
    Instances,
    LoadBalancers,
}

impl Collection {
    pub const ALL: [Collection; 5] = [
        Collection::Vpcs,
        Collection::Subnets,
        Collection::SecurityGroups,
        Collection::Instances,
        Collection::LoadBalancers,
    ];

    pub fn parse(s: &str) -> Option<Collection> {
        Collection::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Collection::Vpcs => "vpcs",
            Collection::Subnets => "subnets",
            Collection::SecurityGroups => "security_groups",
            Collection::Instances => "instances",
            Collection::LoadBalancers => "load_balancers",
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Collection::Vpcs => "vpc",
            Collection::Subnets => "sub",
            Collection::SecurityGroups => "sg",
            Collection::Instances => "inst",
            Collection::LoadBalancers => "lb",
        }
    }

    fn fields(self) -> &'static [Field] {
        use FieldKind::*;
        const fn f(name: &'static str, kind: FieldKind, required: bool, mutable: bool) -> Field {
            Field { name, kind, required, mutable, default: None }
        }
        const fn d(field: Field, default: Default) -> Field {
            Field { default: Some(default), ..field }
        }
        const VPCS: &[Field] = &[f("cidr", Str, true, false)];
        const SUBNETS: &[Field] = &[
            f("vpc_id", Ref(Collection::Vpcs), true, false),
            f("cidr", Str, true, false),
        ];
        const SECURITY_GROUPS: &[Field] = &[
            f("vpc_id", Ref(Collection::Vpcs), true, false),
            f("rules", StrList, false, true),
        ];
        const INSTANCES: &[Field] = &[
            f("subnet_id", Ref(Collection::Subnets), true, false),
            f("image", Str, true, false),
            d(f("size", Str, false, true), Default::Str("small")),
            f("security_group_ids", RefList(Collection::SecurityGroups), false, true),
        ];
        const LOAD_BALANCERS: &[Field] = &[
            f("subnet_id", Ref(Collection::Subnets), true, false),
            f("instance_ids", RefList(Collection::Instances), true, true),
            d(f("port", Int, false, true), Default::Int(80)),
        ];
        match self {
            Collection::Vpcs => VPCS,
            Collection::Subnets => SUBNETS,
            Collection::SecurityGroups => SECURITY_GROUPS,
            Collection::Instances => INSTANCES,
            Collection::LoadBalancers => LOAD_BALANCERS,
        }
    }

    fn computed(self) -> &'static [&'static str] {
        match self {
            Collection::Instances => &["private_ip"],
            Collection::LoadBalancers => &["dns_name"],
            _ => &[],
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy)]
enum FieldKind {
    Str,
    Int,
    StrList,
    Ref(Collection),
    RefList(Collection),
}

#[derive(Clone, Copy)]
enum Default {
    Str(&'static str),
    Int(i64),
}

impl Default {
    fn json(self) -> Json {
        match self {
            Default::Str(s) => json!(s),
            Default::Int(i) => json!(i),
        }
    }
}

#[derive(Clone, Copy)]
struct Field {
    name: &'static str,
    kind: FieldKind,
    required: bool,
    mutable: bool,
    default: Option<Default>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Create,
    Read,
    List,
    Update,
    Delete,
}

/// An injected failure: the next `count` matching requests answer `status`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub collection: Collection,
    pub operation: Operation,
    pub count: u32,
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub method: String,
    pub path: String,
    pub status: u16,
}

/// A response: status plus optional JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Option<Json>,
}

impl Reply {
    fn json(status: u16, body: Json) -> Reply {
        Reply { status, body: Some(body) }
    }

    fn error(status: u16, message: impl Into<String>) -> Reply {
        Reply::json(status, json!({ "error": message.into() }))
    }

    pub fn body_text(&self) -> String {
        self.body.as_ref().map(Json::to_string).unwrap_or_default()
    }
}

type Objects = BTreeMap<Collection, BTreeMap<String, Map<String, Json>>>;

#[derive(Debug, Default, Serialize, Deserialize)]
struct Data {
    objects: Objects,
    counters: BTreeMap<Collection, u64>,
}

/// The cloud's whole state. Mutations take the write lock, so they are
/// serialized; reads share the read lock.
#[derive(Debug, Default)]
pub struct Cloud {
    data: RwLock<Data>,
    faults: Mutex<Vec<Fault>>,
    journal: Mutex<Vec<JournalEntry>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn exists(objects: &Objects, coll: Collection, id: &str) -> bool {
    objects.get(&coll).is_some_and(|m| m.contains_key(id))
}

/// Ids an object points at, with the field holding each.
fn references(coll: Collection, obj: &Map<String, Json>) -> Vec<(&'static str, Collection, String)> {
    let mut out = Vec::new();
    for field in coll.fields() {
        match (field.kind, obj.get(field.name)) {
            (FieldKind::Ref(target), Some(Json::String(id))) => out.push((field.name, target, id.clone())),
            (FieldKind::RefList(target), Some(Json::Array(ids))) => {
                for id in ids.iter().filter_map(Json::as_str) {
                    out.push((field.name, target, id.to_string()));
                }
            }
            _ => {}
        }
    }
    out
}

fn check_value(field: &Field, value: &Json, objects: &Objects) -> Result<(), String> {
    let name = field.name;
    match field.kind {
        FieldKind::Str if value.is_string() => Ok(()),
        FieldKind::Str => Err(format!("{name}: expected a string")),
        FieldKind::Int if value.is_i64() => Ok(()),
        FieldKind::Int => Err(format!("{name}: expected an integer")),
        FieldKind::StrList => match value.as_array() {
            Some(items) if items.iter().all(Json::is_string) => Ok(()),
            _ => Err(format!("{name}: expected a list of strings")),
        },
        FieldKind::Ref(target) => match value.as_str() {
            Some(id) if exists(objects, target, id) => Ok(()),
            Some(_) => Err(format!("{name}: not found")),
            None => Err(format!("{name}: expected a string")),
        },
        FieldKind::RefList(target) => match value.as_array() {
            Some(items) => {
                for item in items {
                    match item.as_str() {
                        Some(id) if exists(objects, target, id) => {}
                        Some(id) => return Err(format!("{name}: {id} not found")),
                        None => return Err(format!("{name}: expected a list of strings")),
                    }
                }
                Ok(())
            }
            None => Err(format!("{name}: expected a list of strings")),
        },
    }
}

fn check_unknown_fields(coll: Collection, body: &Map<String, Json>) -> Result<(), String> {
    for key in body.keys() {
        if key == "id" || coll.computed().contains(&key.as_str()) {
            return Err(format!("{key}: read-only"));
        }
        if !coll.fields().iter().any(|f| f.name == key) {
            return Err(format!("{key}: unknown field"));
        }
    }
    Ok(())
}

impl Cloud {
    pub fn new() -> Self {
        Cloud::default()
    }

    pub fn add_fault(&self, fault: Fault) {
        if fault.count > 0 {
            lock(&self.faults).push(fault);
        }
    }

    fn take_fault(&self, coll: Collection, op: Operation) -> Option<u16> {
        let mut faults = lock(&self.faults);
        let i = faults
            .iter()
            .position(|f| f.collection == coll && f.operation == op && f.count > 0)?;
        faults[i].count -= 1;
        let status = faults[i].status;
        if faults[i].count == 0 {
            faults.remove(i);
        }
        Some(status)
    }

    /// Clears objects, counters, faults and the journal.
    pub fn reset(&self) {
        *self.data.write().unwrap_or_else(|e| e.into_inner()) = Data::default();
        lock(&self.faults).clear();
        lock(&self.journal).clear();
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        lock(&self.journal).clone()
    }

    /// Objects and counters, for persisting across restarts.
    pub fn snapshot(&self) -> Json {
        serde_json::to_value(&*self.data.read().unwrap_or_else(|e| e.into_inner()))
            .expect("data serializes")
    }

    pub fn restore(&self, snapshot: &Json) -> Result<(), String> {
        let data: Data = serde_json::from_value(snapshot.clone()).map_err(|e| e.to_string())?;
        *self.data.write().unwrap_or_else(|e| e.into_inner()) = data;
        self.check_integrity()
    }

    /// Every reference points at a live object.
    pub fn check_integrity(&self) -> Result<(), String> {
        let data = self.data.read().unwrap_or_else(|e| e.into_inner());
        for (coll, objects) in &data.objects {
            for (id, obj) in objects {
                for (field, target, ref_id) in references(*coll, obj) {
                    if !exists(&data.objects, target, &ref_id) {
                        return Err(format!("{id}.{field} dangles: {ref_id}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, coll: Collection, id: &str) -> Option<Map<String, Json>> {
        let data = self.data.read().unwrap_or_else(|e| e.into_inner());
        data.objects.get(&coll).and_then(|m| m.get(id)).cloned()
    }

    pub fn list(&self, coll: Collection) -> Vec<Map<String, Json>> {
        let data = self.data.read().unwrap_or_else(|e| e.into_inner());
        data.objects
            .get(&coll)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    /// Routes one HTTP request.
    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> Reply {
        let path = url.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let reply = match (method, segments.as_slice()) {
            ("POST", ["admin", "faults"]) => self.handle_fault(body),
            ("POST", ["admin", "reset"]) => {
                self.reset();
                return Reply::json(200, json!({}));
            }
            ("GET", ["admin", "journal"]) => {
                return Reply::json(200, serde_json::to_value(self.journal()).expect("journal serializes"))
            }
            (_, ["v1", coll, rest @ ..]) => {
                let Some(coll) = Collection::parse(coll) else {
                    return Reply::error(404, format!("unknown collection `{coll}`"));
                };
                let op = match (method, rest) {
                    ("POST", []) => Operation::Create,
                    ("GET", []) => Operation::List,
                    ("GET", [_]) => Operation::Read,
                    ("PUT", [_]) => Operation::Update,
                    ("DELETE", [_]) => Operation::Delete,
                    _ => return Reply::error(405, format!("{method} not allowed on {path}")),
                };
                let reply = match self.take_fault(coll, op) {
                    Some(status) => Reply::error(status, "injected"),
                    None => self.dispatch(coll, op, rest.first().copied(), body),
                };
                if matches!(op, Operation::Create | Operation::Update | Operation::Delete) {
                    lock(&self.journal).push(JournalEntry {
                        method: method.to_string(),
                        path: path.to_string(),
                        status: reply.status,
                    });
                    if cfg!(debug_assertions) {
                        if let Err(e) = self.check_integrity() {
                            panic!("integrity violated after {method} {path}: {e}");
                        }
                    }
                }
                reply
            }
            _ => Reply::error(404, format!("no route for {method} {path}")),
        };
        reply
    }

    fn handle_fault(&self, body: &[u8]) -> Reply {
        match serde_json::from_slice::<Fault>(body) {
            Ok(fault) => {
                self.add_fault(fault);
                Reply::json(200, json!({}))
            }
            Err(e) => Reply::error(400, format!("bad fault rule: {e}")),
        }
    }

    fn dispatch(&self, coll: Collection, op: Operation, id: Option<&str>, body: &[u8]) -> Reply {
        let parse_body = || -> Result<Map<String, Json>, Reply> {
            match serde_json::from_slice::<Json>(body) {
                Ok(Json::Object(m)) => Ok(m),
                _ => Err(Reply::error(400, "body must be a JSON object")),
            }
        };
        match op {
            Operation::List => Reply::json(200, Json::Array(self.list(coll).into_iter().map(Json::Object).collect())),
            Operation::Read => match self.get(coll, id.unwrap_or_default()) {
                Some(obj) => Reply::json(200, Json::Object(obj)),
                None => Reply::error(404, format!("{} not found", id.unwrap_or_default())),
            },
            Operation::Create => match parse_body() {
                Ok(b) => self.create(coll, b),
                Err(r) => r,
            },
            Operation::Update => match parse_body() {
                Ok(b) => self.update(coll, id.unwrap_or_default(), b),
                Err(r) => r,
            },
            Operation::Delete => self.delete(coll, id.unwrap_or_default()),
        }
    }

    fn create(&self, coll: Collection, body: Map<String, Json>) -> Reply {
        let mut data = self.data.write().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = check_unknown_fields(coll, &body) {
            return Reply::error(422, e);
        }
        let mut obj = Map::new();
        for field in coll.fields() {
            match body.get(field.name) {
                None | Some(Json::Null) if field.required => {
                    return Reply::error(422, format!("{}: required", field.name))
                }
                None | Some(Json::Null) => {
                    if let Some(d) = field.default {
                        obj.insert(field.name.to_string(), d.json());
                    }
                }
                Some(v) => {
                    if let Err(e) = check_value(field, v, &data.objects) {
                        return Reply::error(422, e);
                    }
                    obj.insert(field.name.to_string(), v.clone());
                }
            }
        }
        let counter = data.counters.entry(coll).or_insert(0);
        *counter += 1;
        let n = *counter;
        let id = format!("{}-{n:06}", coll.prefix());
        let mut stored = Map::new();
        stored.insert("id".to_string(), json!(id));
        stored.extend(obj);
        match coll {
            Collection::Instances => {
                stored.insert("private_ip".into(), json!(format!("10.0.{}.{}", n / 256, n % 256)));
            }
            Collection::LoadBalancers => {
                stored.insert("dns_name".into(), json!(format!("{id}.lb.mock")));
            }
            _ => {}
        }
        data.objects.entry(coll).or_default().insert(id, stored.clone());
        Reply::json(201, Json::Object(stored))
    }

    fn update(&self, coll: Collection, id: &str, body: Map<String, Json>) -> Reply {
        let mut data = self.data.write().unwrap_or_else(|e| e.into_inner());
        let Some(current) = data.objects.get(&coll).and_then(|m| m.get(id)).cloned() else {
            return Reply::error(404, format!("{id} not found"));
        };
        for (key, value) in &body {
            let unchanged = current.get(key) == Some(value);
            if key == "id" || coll.computed().contains(&key.as_str()) {
                if !unchanged {
                    return Reply::error(422, format!("{key}: read-only"));
                }
            } else if !coll.fields().iter().any(|f| f.name == key) {
                return Reply::error(422, format!("{key}: unknown field"));
            }
        }
        let mut next = current.clone();
        for field in coll.fields() {
            let Some(value) = body.get(field.name) else { continue };
            if !field.mutable {
                if current.get(field.name) != Some(value) {
                    return Reply::error(422, format!("{}: immutable", field.name));
                }
                continue;
            }
            if value.is_null() {
                if field.required {
                    return Reply::error(422, format!("{}: required", field.name));
                }
                match field.default {
                    Some(d) => next.insert(field.name.to_string(), d.json()),
                    None => next.remove(field.name),
                };
                continue;
            }
            if let Err(e) = check_value(field, value, &data.objects) {
                return Reply::error(422, e);
            }
            next.insert(field.name.to_string(), value.clone());
        }
        data.objects
            .get_mut(&coll)
            .expect("collection exists")
            .insert(id.to_string(), next.clone());
        Reply::json(200, Json::Object(next))
    }

    fn delete(&self, coll: Collection, id: &str) -> Reply {
        let mut data = self.data.write().unwrap_or_else(|e| e.into_inner());
        if !exists(&data.objects, coll, id) {
            return Reply::error(404, format!("{id} not found"));
        }
        let mut referrers: Vec<&String> = Vec::new();
        for (c, objects) in &data.objects {
            for (other, obj) in objects {
                if references(*c, obj).iter().any(|(_, t, r)| *t == coll && r == id) {
                    referrers.push(other);
                }
            }
        }
        referrers.sort();
        if let Some(first) = referrers.first() {
            return Reply::error(409, format!("referenced by {first}"));
        }
        data.objects.get_mut(&coll).expect("collection exists").remove(id);
        Reply { status: 204, body: None }
    }
}
