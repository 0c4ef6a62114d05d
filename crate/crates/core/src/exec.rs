//! Runs single plan nodes against the stores.
//!
//! Each function covers one [`NodeTarget`]; the engine hands a node to the
//! agent that owns its target, and that agent calls the matching function here.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::plan::{NodePayload, NodeTarget, PlanNode, TrackingQuery, VectorQuery};
use crate::store::{DocumentStore, FilterClause, FilterOp, Operand, StoreError, StructuredQuery, PLAYS};
use crate::synth::{ChunkHit, SubAnswer, SubAnswerBody, TraceSummary};
use crate::tracking::{derive_kinematics, field_coverage, TrackingError, TrackingStore};
use crate::value::Scalar;
use crate::vector::{Embedder, VectorError, VectorIndex};

/// Grid cell edge, in yards, for field-coverage summaries.
pub const COVERAGE_CELL_YARDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("input from node {0} is missing")]
    MissingInput(String),
    #[error("input from node {0} has no play_id column")]
    NoPlayIds(String),
    #[error("node targets {got:?}, not {expected:?}")]
    WrongTarget { expected: NodeTarget, got: NodeTarget },
}

/// Everything a node may read.
#[derive(Clone, Copy)]
pub struct Stores<'a> {
    pub documents: &'a DocumentStore,
    pub tracking: &'a TrackingStore,
    pub vectors: &'a VectorIndex,
    pub embedder: &'a Embedder,
}

fn describe(filter: &[FilterClause]) -> String {
    filter
        .iter()
        .map(|c| {
            let op = match c.op {
                FilterOp::Eq => "=",
                FilterOp::Ne => "!=",
                FilterOp::Lt => "<",
                FilterOp::Le => "<=",
                FilterOp::Gt => ">",
                FilterOp::Ge => ">=",
                FilterOp::In => "in",
            };
            let value = match &c.value {
                Operand::Value(v) => v.key_string(),
                Operand::Set(vs) => format!("[{}]", vs.iter().map(Scalar::key_string).collect::<Vec<_>>().join(", ")),
            };
            format!("{} {op} {value}", c.field)
        })
        .collect::<Vec<_>>()
        .join(" and ")
}

fn play_ids_of(from: &str, inputs: &BTreeMap<String, SubAnswer>) -> Result<Vec<String>, ExecError> {
    let input = inputs.get(from).ok_or_else(|| ExecError::MissingInput(from.to_string()))?;
    let SubAnswerBody::Table(table) = &input.body else {
        return Err(ExecError::NoPlayIds(from.to_string()));
    };
    let col = table.column("play_id").ok_or_else(|| ExecError::NoPlayIds(from.to_string()))?;
    Ok(table.rows.iter().filter_map(|r| r.get(col)?.as_str().map(str::to_string)).collect())
}

fn answer(node: &PlanNode, body: SubAnswerBody, source_note: String) -> SubAnswer {
    SubAnswer { node_id: node.node_id.clone(), body, source_note }
}

pub fn run_structured(
    node: &PlanNode,
    inputs: &BTreeMap<String, SubAnswer>,
    store: &DocumentStore,
) -> Result<SubAnswer, ExecError> {
    match &node.payload {
        NodePayload::Query(q) => {
            let table = store.execute(q)?;
            let note = format!("{} where {}", q.collection, describe(&q.filter));
            Ok(answer(node, SubAnswerBody::Table(table), note))
        }
        NodePayload::Rank(r) => {
            let rank = store.rank_lookup(&r.metric, &r.entity_id, &r.scope)?;
            let note =
                format!("metric_ranks {} for {} in {} week {}", rank.metric, rank.entity_id, rank.season, rank.week);
            Ok(answer(node, SubAnswerBody::Rank(rank), note))
        }
        NodePayload::MediaLinks { plays_from } => {
            let ids = play_ids_of(plays_from, inputs)?;
            let mut q = StructuredQuery::on(PLAYS);
            q.filter.push(FilterClause::one_of("play_id", ids.into_iter().map(Scalar::Text).collect()));
            q.select = Some(alloc::vec!["play_id".to_string()]);
            let table = store.execute(&q)?;
            Ok(answer(node, SubAnswerBody::Table(table), format!("{PLAYS} ids verified")))
        }
        other => Err(ExecError::WrongTarget { expected: NodeTarget::Structured, got: other.target() }),
    }
}

pub fn run_tracking(
    node: &PlanNode,
    inputs: &BTreeMap<String, SubAnswer>,
    store: &TrackingStore,
) -> Result<SubAnswer, ExecError> {
    let NodePayload::Tracking(TrackingQuery { play_ids_from, play_ids, player_id }) = &node.payload else {
        return Err(ExecError::WrongTarget { expected: NodeTarget::Tracking, got: node.payload.target() });
    };
    let mut ids = play_ids.clone();
    if let Some(from) = play_ids_from {
        ids.extend(play_ids_of(from, inputs)?);
    }
    let restrict = play_ids_from.is_some() || !play_ids.is_empty();
    let mut summaries = Vec::new();
    for trace in store.query_traces(restrict.then_some(ids.as_slice()), player_id.as_deref()) {
        let k = derive_kinematics(trace)?;
        let c = field_coverage(trace, COVERAGE_CELL_YARDS)?;
        summaries.push(TraceSummary {
            play_id: trace.play_id.clone(),
            player_id: trace.player_id.clone(),
            max_speed: k.max_speed,
            mean_speed: k.mean_speed,
            cells_visited: c.cells_visited,
        });
    }
    let note = format!("{} tracking traces", summaries.len());
    Ok(answer(node, SubAnswerBody::Kinematics(summaries), note))
}

pub fn run_vector(
    node: &PlanNode,
    inputs: &BTreeMap<String, SubAnswer>,
    index: &VectorIndex,
    embedder: &Embedder,
) -> Result<SubAnswer, ExecError> {
    let NodePayload::Vector(VectorQuery { text, k, filter, play_ids_from }) = &node.payload else {
        return Err(ExecError::WrongTarget { expected: NodeTarget::Vector, got: node.payload.target() });
    };
    let mut filter = filter.clone();
    if let Some(from) = play_ids_from {
        let ids = play_ids_of(from, inputs)?;
        if ids.is_empty() {
            // an empty id list would otherwise mean "any play"
            return Ok(answer(node, SubAnswerBody::Chunks(Vec::new()), "no upstream plays".into()));
        }
        filter.play_ids.extend(ids);
    }
    let query = embedder.embed(text);
    let hits = match index.search(&query, *k, (!filter.is_empty()).then_some(&filter)) {
        Ok(hits) => hits,
        // no query term is in the corpus vocabulary: nothing can match
        Err(VectorError::DegenerateQuery) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let hits: Vec<ChunkHit> = hits
        .into_iter()
        .map(|h| ChunkHit {
            chunk_id: h.chunk.chunk_id.clone(),
            text: h.chunk.text.clone(),
            source_kind: h.chunk.source_kind,
            similarity: h.similarity,
            play_ids: h.chunk.play_ids.clone(),
            timestamp: h.chunk.timestamp,
        })
        .collect();
    let note = format!("{} chunks", hits.len());
    Ok(answer(node, SubAnswerBody::Chunks(hits), note))
}

/// Dispatches on the node's target.
pub fn run_node(
    node: &PlanNode,
    inputs: &BTreeMap<String, SubAnswer>,
    stores: Stores<'_>,
) -> Result<SubAnswer, ExecError> {
    match node.target {
        NodeTarget::Structured => run_structured(node, inputs, stores.documents),
        NodeTarget::Tracking => run_tracking(node, inputs, stores.tracking),
        NodeTarget::Vector => run_vector(node, inputs, stores.vectors, stores.embedder),
    }
}
