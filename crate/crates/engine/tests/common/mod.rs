#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use huddle::config::Config;
use huddle::runtime::Agent;
use huddle::{Engine, Service, World};
use huddle_core::plan::{NodePayload, NodeRole, NodeTarget, PlanNode, QueryPlan};
use huddle_core::store::{Provenance, ResultTable, StructuredQuery};
use huddle_core::synth::{SubAnswer, SubAnswerBody};
use huddle_core::Scalar;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn config(state_dir: &std::path::Path) -> Config {
    Config {
        fixtures_dir: fixtures_dir(),
        state_dir: state_dir.to_path_buf(),
        media_base_url: "http://media.test".into(),
        ..Config::default()
    }
}

pub fn world() -> Arc<World> {
    Arc::new(World::load(&fixtures_dir(), None).expect("fixtures load"))
}

pub fn engine() -> Engine {
    Engine::new(world(), &config(std::path::Path::new("/nonexistent"))).expect("engine")
}

pub fn service(state_dir: &std::path::Path) -> Service {
    Service::open(config(state_dir)).expect("service")
}

/// A structured node whose payload is irrelevant to the fake agents.
pub fn node(id: &str) -> PlanNode {
    PlanNode {
        node_id: id.to_string(),
        target: NodeTarget::Structured,
        payload: NodePayload::Query(StructuredQuery::on("plays")),
        label: format!("step {id}"),
        entity_id: None,
        key: None,
        role: NodeRole::Stat,
    }
}

pub fn plan(ids: &[&str], edges: &[(&str, &str)]) -> QueryPlan {
    QueryPlan::from_parts(
        ids.iter().map(|i| node(i)).collect(),
        edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        None,
    )
    .expect("valid plan")
}

/// One-cell table naming the node and the inputs it saw.
pub fn echo(node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> SubAnswer {
    let seen: Vec<&str> = inputs.keys().map(String::as_str).collect();
    SubAnswer {
        node_id: node.node_id.clone(),
        body: SubAnswerBody::Table(ResultTable {
            columns: vec!["node".into()],
            rows: vec![vec![Scalar::Text(node.node_id.clone())]],
            provenance: Provenance { collection: "fake".into(), filter: Vec::new() },
        }),
        source_note: format!("inputs: {}", seen.join(",")),
    }
}

/// Sleeps per node id, then echoes. Unlisted nodes answer at once.
pub struct Sleepy(pub BTreeMap<String, Duration>);

impl Sleepy {
    pub fn uniform(ids: &[&str], d: Duration) -> Self {
        Sleepy(ids.iter().map(|i| (i.to_string(), d)).collect())
    }
}

impl Agent for Sleepy {
    fn handle(&self, node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String> {
        if let Some(d) = self.0.get(&node.node_id) {
            std::thread::sleep(*d);
        }
        Ok(echo(node, inputs))
    }
}

pub struct Failing;

impl Agent for Failing {
    fn handle(&self, node: &PlanNode, _: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String> {
        Err(format!("{} is broken", node.node_id))
    }
}
