//! Recorded state of managed infrastructure, and the backends that store it.
//!
//! Every backend offers the same four operations: read, write with an
//! expected serial (optimistic concurrency), lock and unlock. Writes require
//! the lock token, and each successful write bumps the serial by exactly one.

mod http;
mod local;
pub mod server;

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use self::http::HttpBackend;
pub use self::local::LocalBackend;
use crate::address::ResourceAddress;
use crate::value::Attributes;

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("state is corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported state format version {0} (expected {STATE_FORMAT_VERSION})")]
    VersionMismatch(u32),
    #[error("serial conflict: expected stored serial {expected}, found {stored} (another client wrote the state)")]
    SerialConflict { expected: u64, stored: u64 },
    #[error("state lineage changed from {stored} to {given}")]
    LineageMismatch { stored: String, given: String },
    #[error("snapshot serial {snapshot} does not match expected serial {expected}")]
    SnapshotSerial { snapshot: u64, expected: u64 },
    #[error("state is locked by {}", describe_lock(.0))]
    AlreadyLocked(Box<LockInfo>),
    #[error("the state lock is not held by this client")]
    LockNotHeld,
    #[error("lock token does not match the current lock")]
    WrongToken,
    #[error("state is not locked")]
    NotLocked,
    #[error("state contains unknown values for `{0}`")]
    UnknownValue(String),
    #[error("state I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("remote state: {0}")]
    Remote(String),
}

fn describe_lock(info: &LockInfo) -> String {
    format!(
        "{} (operation: {}, since {}, lock id: {})",
        info.holder,
        info.operation,
        info.acquired_at.to_rfc3339(),
        info.token
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceState {
    pub type_name: String,
    pub name: String,
    pub provider: String,
    pub id: String,
    pub attributes: Attributes,
    pub dependencies: Vec<ResourceAddress>,
}

impl ResourceState {
    pub fn address(&self) -> ResourceAddress {
        ResourceAddress::managed(&self.type_name, &self.name)
    }
}

/// All managed resources at one point in a state history.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub format_version: u32,
    pub serial: u64,
    pub lineage: String,
    pub resources: BTreeMap<ResourceAddress, ResourceState>,
}

impl StateSnapshot {
    /// Serial 0, a fresh lineage, no resources.
    pub fn empty() -> Self {
        StateSnapshot {
            format_version: STATE_FORMAT_VERSION,
            serial: 0,
            lineage: uuid::Uuid::new_v4().to_string(),
            resources: BTreeMap::new(),
        }
    }

    /// The JSON document: resources sorted by address, trailing newline.
    pub fn to_json_string(&self) -> Result<String, StateError> {
        for (addr, r) in &self.resources {
            if r.attributes.values().any(|v| v.contains_unknown()) {
                return Err(StateError::UnknownValue(addr.to_string()));
            }
        }
        let doc = StateDoc {
            format_version: self.format_version,
            serial: self.serial,
            lineage: self.lineage.clone(),
            resources: self
                .resources
                .iter()
                .map(|(addr, r)| ResourceEntry {
                    address: addr.to_string(),
                    type_name: r.type_name.clone(),
                    name: r.name.clone(),
                    provider: r.provider.clone(),
                    id: r.id.clone(),
                    attributes: r.attributes.clone(),
                    dependencies: r.dependencies.iter().map(ToString::to_string).collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| StateError::Corrupt(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, StateError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let version: Version =
            serde_json::from_str(text).map_err(|e| StateError::Corrupt(e.to_string()))?;
        if version.format_version != STATE_FORMAT_VERSION {
            return Err(StateError::VersionMismatch(version.format_version));
        }
        let doc: StateDoc =
            serde_json::from_str(text).map_err(|e| StateError::Corrupt(e.to_string()))?;
        let mut resources = BTreeMap::new();
        for entry in doc.resources {
            let addr = ResourceAddress::managed(&entry.type_name, &entry.name);
            if addr.to_string() != entry.address {
                return Err(StateError::Corrupt(format!(
                    "resource `{}` is recorded with type `{}` and name `{}`",
                    entry.address, entry.type_name, entry.name
                )));
            }
            if entry.id.is_empty() {
                return Err(StateError::Corrupt(format!("`{addr}` has an empty id")));
            }
            let dependencies = entry
                .dependencies
                .iter()
                .map(|d| d.parse().map_err(|e| StateError::Corrupt(format!("{e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let state = ResourceState {
                type_name: entry.type_name,
                name: entry.name,
                provider: entry.provider,
                id: entry.id,
                attributes: entry.attributes,
                dependencies,
            };
            if resources.insert(addr.clone(), state).is_some() {
                return Err(StateError::Corrupt(format!("`{addr}` recorded twice")));
            }
        }
        Ok(StateSnapshot {
            format_version: doc.format_version,
            serial: doc.serial,
            lineage: doc.lineage,
            resources,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    format_version: u32,
    serial: u64,
    lineage: String,
    resources: Vec<ResourceEntry>,
}

#[derive(Serialize, Deserialize)]
struct ResourceEntry {
    address: String,
    #[serde(rename = "type")]
    type_name: String,
    name: String,
    provider: String,
    id: String,
    attributes: Attributes,
    dependencies: Vec<String>,
}

/// Renders one resource the way it appears inside the state file.
pub fn resource_json(addr: &ResourceAddress, r: &ResourceState) -> serde_json::Value {
    serde_json::to_value(ResourceEntry {
        address: addr.to_string(),
        type_name: r.type_name.clone(),
        name: r.name.clone(),
        provider: r.provider.clone(),
        id: r.id.clone(),
        attributes: r.attributes.clone(),
        dependencies: r.dependencies.iter().map(ToString::to_string).collect(),
    })
    .expect("state entries serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LockOperation {
    Plan,
    Apply,
    Destroy,
}

impl std::fmt::Display for LockOperation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LockOperation::Plan => "plan",
            LockOperation::Apply => "apply",
            LockOperation::Destroy => "destroy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockInfo {
    pub holder: String,
    pub operation: LockOperation,
    pub acquired_at: DateTime<Utc>,
    pub token: String,
}

impl LockInfo {
    /// A lock request stamped now with a fresh token.
    pub fn new(holder: impl Into<String>, operation: LockOperation) -> Self {
        LockInfo {
            holder: holder.into(),
            operation,
            acquired_at: Utc::now(),
            token: uuid::Uuid::new_v4().to_string(),
        }
    }
}

/// Where state lives. Implementations serialize operations per handle;
/// cross-process exclusion comes from the lock protocol.
pub trait Backend: Send + Sync {
    /// The stored snapshot, or [`StateSnapshot::empty`] if none exists.
    fn read_state(&self) -> Result<StateSnapshot, StateError>;

    /// Stores `snapshot` (whose serial must equal `expected_serial`) as
    /// serial `expected_serial + 1`. Fails if the stored serial moved.
    fn write_state(
        &self,
        snapshot: &StateSnapshot,
        expected_serial: u64,
        token: &str,
    ) -> Result<u64, StateError>;

    /// Takes the exclusive lock. The token in `info` identifies this
    /// acquisition and is returned on success.
    fn lock(&self, info: &LockInfo) -> Result<String, StateError>;

    fn unlock(&self, token: &str) -> Result<(), StateError>;

    /// Human-readable location, for messages.
    fn describe(&self) -> String;
}

/// Held lock that releases itself when dropped.
pub struct StateLock {
    backend: Arc<dyn Backend>,
    token: String,
    released: bool,
}

impl StateLock {
    pub fn acquire(
        backend: Arc<dyn Backend>,
        holder: impl Into<String>,
        operation: LockOperation,
    ) -> Result<StateLock, StateError> {
        let info = LockInfo::new(holder, operation);
        let token = backend.lock(&info)?;
        Ok(StateLock {
            backend,
            token,
            released: false,
        })
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn read_state(&self) -> Result<StateSnapshot, StateError> {
        self.backend.read_state()
    }

    pub fn write_state(&self, snapshot: &StateSnapshot) -> Result<u64, StateError> {
        self.backend
            .write_state(snapshot, snapshot.serial, &self.token)
    }

    pub fn release(mut self) -> Result<(), StateError> {
        self.released = true;
        self.backend.unlock(&self.token)
    }
}

impl Drop for StateLock {
    fn drop(&mut self) {
        if !self.released {
            if let Err(e) = self.backend.unlock(&self.token) {
                log::warn!("failed to release state lock: {e}");
            }
        }
    }
}

/// A default holder string: `user@host (pid N)`.
pub fn default_holder() -> String {
    let user = std::env::var("USER").unwrap_or_else(|_| "unknown".to_string());
    let host = std::env::var("HOSTNAME").unwrap_or_else(|_| "localhost".to_string());
    format!("{user}@{host} (pid {})", std::process::id())
}
