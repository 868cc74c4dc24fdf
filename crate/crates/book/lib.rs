//! Every code listing in the guide under `book/src` runs as a doc-test of
//! this crate, one module per chapter so a failure points at its chapter.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../book/src/graph.md")]
pub mod graph {}
#[doc = include_str!("../../book/src/planning.md")]
pub mod planning {}
#[doc = include_str!("../../book/src/state.md")]
pub mod state {}
#[doc = include_str!("../../book/src/providers.md")]
pub mod providers {}
#[doc = include_str!("../../book/src/apply.md")]
pub mod apply {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../book/src/mockcloud.md")]
pub mod mockcloud {}
