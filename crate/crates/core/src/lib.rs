//! A miniature infrastructure-as-code engine.
//!
//! Configuration written in a small HCL-like block language (or its JSON
//! form) is loaded into a [`ConfigDocument`], compared against the recorded
//! [`StateSnapshot`] to produce a [`Plan`], and the plan is applied through
//! [`Provider`] implementations that translate abstract create, update and
//! delete actions into concrete calls.
//!
//! The pipeline, end to end:
//!
//! ```
//! use microform::config::{load_str, ConfigDocument};
//! use microform::plan::diff;
//! use microform::provider::Registry;
//! use microform::state::StateSnapshot;
//!
//! let blocks = load_str(r#"
//!     provider "localfs" {}
//!     resource "localfs_file" "motd" {
//!       path    = "motd"
//!       content = "hello"
//!     }
//! "#).unwrap();
//! let doc = ConfigDocument::from_blocks(blocks, Default::default()).unwrap();
//! let schemas = Registry::builtin().schemas_for(&doc).unwrap();
//! let plan = diff(&doc, &StateSnapshot::empty(), &schemas).unwrap();
//! assert_eq!(plan.summary().add, 1);
//! ```
//!
//! Module map:
//!
//! - [`config`]: lexer, parser, JSON loader, directory loader, evaluation.
//! - [`graph`]: dependency graph, cycle detection, ordering, DOT output.
//! - [`state`]: state snapshots, local and HTTP backends, locking.
//! - [`provider`]: the provider contract, registry, built-in providers.
//! - [`plan`]: refresh, diff, destroy plans, plan files.
//! - [`exec`]: the parallel apply engine.

pub mod address;
pub mod config;
pub mod exec;
pub mod graph;
pub mod plan;
pub mod provider;
pub mod state;
pub mod value;

pub use address::ResourceAddress;
pub use config::ConfigDocument;
pub use exec::{apply, ApplyReport};
pub use graph::DependencyGraph;
pub use plan::{Action, Plan, PlannedChange};
pub use provider::{Provider, ProviderHandle, Registry};
pub use state::{Backend, StateSnapshot};
pub use value::{Attributes, Value};
