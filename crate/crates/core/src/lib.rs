//! Core of the huddle query engine.
//!
//! Everything here is pure: catalog resolution, dialogue memory, prompt
//! interpretation, plan construction, the document/tracking/vector stores and
//! their query executors, answer synthesis and the evaluation math. The crate
//! needs only `alloc`; file formats, threads and the network live in the
//! `huddle` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
// Range checks are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod catalog;
pub mod eval;
pub mod exec;
pub mod hash;
pub mod interpreter;
pub mod memory;
pub mod plan;
pub mod store;
pub mod synth;
pub mod text;
pub mod tracking;
pub mod value;
pub mod vector;

pub use catalog::{Catalog, CatalogRecord, EntityKind, EntityRecord, MetricDef, Scope, StatKey};
pub use interpreter::{Intent, IntentKind, Interpreter, ParseError, ParsedQuery};
pub use memory::{ConversationState, Turn};
pub use plan::{PlanNode, QueryPlan};
pub use store::{DocumentStore, ResultTable, StructuredQuery};
pub use value::Scalar;

/// Season/week the engine treats as "now". Injected, never read from a wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeasonClock {
    pub season: u16,
    pub week: u8,
}
