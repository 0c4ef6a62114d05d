//! Decomposition of a [`ParsedQuery`] into a DAG of retrieval sub-tasks.
//!
//! Independent lookups become sibling nodes with no edges, so the runtime can
//! run them in one stage. Dependent lookups (play ids feeding media, tracking
//! and transcript search) are chained with edges and land in later stages.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Aggregation, Catalog, EntityKind, EntityRecord, Scope};
use crate::hash::fnv1a;
use crate::interpreter::{Intent, ParsedQuery};
use crate::store::{
    AggregateSpec, FilterClause, FilterOp, SortSpec, StructuredQuery, CAP_TABLE, GAME_LOGS, METRIC_RANKS, PLAYS,
};
use crate::value::Scalar;
use crate::vector::{ChunkFilter, SourceKind};

/// Results returned by one vector node.
pub const DEFAULT_VECTOR_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTarget {
    Structured,
    Tracking,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankQuery {
    pub metric: String,
    pub entity_id: String,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingQuery {
    /// Node whose result table supplies a `play_id` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub play_ids_from: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub play_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorQuery {
    pub text: String,
    pub k: usize,
    #[serde(default)]
    pub filter: ChunkFilter,
    /// Node whose `play_id` column is added to `filter.play_ids` at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub play_ids_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodePayload {
    Query(StructuredQuery),
    Rank(RankQuery),
    /// Verifies play ids from an upstream node against the plays collection.
    MediaLinks {
        plays_from: String,
    },
    Tracking(TrackingQuery),
    Vector(VectorQuery),
}

impl NodePayload {
    pub fn target(&self) -> NodeTarget {
        match self {
            NodePayload::Query(_) | NodePayload::Rank(_) | NodePayload::MediaLinks { .. } => NodeTarget::Structured,
            NodePayload::Tracking(_) => NodeTarget::Tracking,
            NodePayload::Vector(_) => NodeTarget::Vector,
        }
    }

    /// Upstream node ids this payload reads at run time.
    pub fn inputs(&self) -> Vec<&str> {
        match self {
            NodePayload::MediaLinks { plays_from } => vec![plays_from.as_str()],
            NodePayload::Tracking(q) => q.play_ids_from.as_deref().into_iter().collect(),
            NodePayload::Vector(q) => q.play_ids_from.as_deref().into_iter().collect(),
            _ => Vec::new(),
        }
    }
}

/// What a node's result means to synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum NodeRole {
    Stat,
    Rank,
    Record,
    Cap,
    Roster { position: String },
    Plays,
    Media,
    Tracking,
    Context,
}

impl NodeRole {
    fn tag(&self) -> String {
        match self {
            NodeRole::Roster { position } => format!("roster:{position}"),
            other => format!("{other:?}").to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub node_id: String,
    pub target: NodeTarget,
    pub payload: NodePayload,
    /// Human-readable description; never contains digits.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    /// Stat or metric key the node answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cycle through edge {from} -> {to}")]
pub struct CycleError {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no planner rule for intent {0}")]
    UnsupportedIntent(String),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("edge {from} -> {to} names a missing node")]
    DanglingEdge { from: String, to: String },
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("node {node_id} payload does not match target")]
    TargetMismatch { node_id: String },
    #[error("plan has no nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<ParsedQuery>,
}

impl QueryPlan {
    /// Validated plan: unique ids, matching targets, edges between existing
    /// nodes, no cycles.
    pub fn from_parts(
        nodes: Vec<PlanNode>,
        edges: Vec<(String, String)>,
        origin: Option<ParsedQuery>,
    ) -> Result<Self, PlanError> {
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if !ids.insert(n.node_id.as_str()) {
                return Err(PlanError::DuplicateNode(n.node_id.clone()));
            }
            if n.payload.target() != n.target {
                return Err(PlanError::TargetMismatch { node_id: n.node_id.clone() });
            }
        }
        for (from, to) in &edges {
            if !ids.contains(from.as_str()) || !ids.contains(to.as_str()) {
                return Err(PlanError::DanglingEdge { from: from.clone(), to: to.clone() });
            }
        }
        let plan = QueryPlan { nodes, edges, origin };
        plan.stages()?;
        Ok(plan)
    }

    pub fn node(&self, node_id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn predecessors(&self, node_id: &str) -> Vec<&str> {
        self.edges.iter().filter(|(_, to)| to == node_id).map(|(from, _)| from.as_str()).collect()
    }

    /// Topological layering: every node sits one stage after its latest predecessor.
    pub fn stages(&self) -> Result<Vec<BTreeSet<String>>, CycleError> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.node_id.as_str(), 0)).collect();
        for (_, to) in &self.edges {
            if let Some(d) = indegree.get_mut(to.as_str()) {
                *d += 1;
            }
        }
        let mut current: BTreeSet<String> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| id.to_string()).collect();
        let mut stages = Vec::new();
        let mut placed = 0;
        while !current.is_empty() {
            let mut next = BTreeSet::new();
            for id in &current {
                for (from, to) in &self.edges {
                    if from == id {
                        let d = indegree.get_mut(to.as_str()).expect("validated edge");
                        *d -= 1;
                        if *d == 0 {
                            next.insert(to.clone());
                        }
                    }
                }
            }
            placed += current.len();
            stages.push(current);
            current = next;
        }
        if placed < self.nodes.len() {
            return Err(self.back_edge());
        }
        Ok(stages)
    }

    fn back_edge(&self) -> CycleError {
        // iterative DFS; the first edge into a node still on the stack closes a cycle
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for root in &self.nodes {
            if state.contains_key(root.node_id.as_str()) {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(root.node_id.as_str(), 0)];
            state.insert(root.node_id.as_str(), 1);
            while let Some((node, i)) = stack.pop() {
                let outgoing: Vec<&str> =
                    self.edges.iter().filter(|(f, _)| f == node).map(|(_, t)| t.as_str()).collect();
                if i < outgoing.len() {
                    stack.push((node, i + 1));
                    let next = outgoing[i];
                    match state.get(next) {
                        Some(1) => return CycleError { from: node.to_string(), to: next.to_string() },
                        Some(_) => {}
                        None => {
                            state.insert(next, 1);
                            stack.push((next, 0));
                        }
                    }
                } else {
                    state.insert(node, 2);
                }
            }
        }
        let (from, to) = self.edges.first().cloned().unwrap_or_default();
        CycleError { from, to }
    }

    /// Union with another plan; nodes already present by id are kept once.
    pub fn union(mut self, other: QueryPlan) -> Result<QueryPlan, PlanError> {
        for n in other.nodes {
            if self.node(&n.node_id).is_none() {
                self.nodes.push(n);
            }
        }
        for e in other.edges {
            if !self.edges.contains(&e) {
                self.edges.push(e);
            }
        }
        QueryPlan::from_parts(self.nodes, self.edges, self.origin)
    }

    pub fn targets(&self) -> BTreeSet<NodeTarget> {
        self.nodes.iter().map(|n| n.target).collect()
    }
}

/// Weights of the structural difficulty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeWeights {
    pub nodes: f64,
    pub edges: f64,
    pub stages: f64,
    pub targets: f64,
}

impl Default for ChallengeWeights {
    fn default() -> Self {
        ChallengeWeights { nodes: 1.0, edges: 1.0, stages: 1.0, targets: 1.0 }
    }
}

pub fn challenge_score(plan: &QueryPlan) -> f64 {
    challenge_score_with(plan, &ChallengeWeights::default())
}

/// nodes + edges + (stages - 1) + (distinct targets - 1), each term weighted.
pub fn challenge_score_with(plan: &QueryPlan, w: &ChallengeWeights) -> f64 {
    let stages = plan.stages().map_or(plan.nodes.len(), |s| s.len()).max(1);
    let targets = plan.targets().len().max(1);
    w.nodes * plan.nodes.len() as f64
        + w.edges * plan.edges.len() as f64
        + w.stages * (stages - 1) as f64
        + w.targets * (targets - 1) as f64
}

struct Planner<'a> {
    parsed: &'a ParsedQuery,
    catalog: &'a Catalog,
    nodes: Vec<PlanNode>,
    edges: Vec<(String, String)>,
}

fn label_text(s: &str) -> String {
    s.chars().filter(|c| !c.is_ascii_digit()).collect::<String>().replace('_', " ")
}

fn scope_filters(scope: &Scope, season_field: &str) -> Vec<FilterClause> {
    let mut out = vec![FilterClause::eq(season_field, i64::from(scope.season))];
    if let Some(w) = scope.through_week {
        out.push(FilterClause::cmp("week", FilterOp::Le, i64::from(w)));
    }
    for f in &scope.game_filter {
        out.push(FilterClause::eq(&f.field, f.value.clone()));
    }
    out
}

impl Planner<'_> {
    fn push(
        &mut self,
        entity: Option<&EntityRecord>,
        key: Option<&str>,
        role: NodeRole,
        payload: NodePayload,
        label: String,
    ) -> String {
        let kind = self.parsed.intent.kind();
        let entity_id = entity.map(|e| e.entity_id.clone());
        let hash = fnv1a(&[kind.as_str(), entity_id.as_deref().unwrap_or(""), key.unwrap_or(""), &role.tag()]);
        let node_id = format!("n{hash:016x}");
        self.nodes.push(PlanNode {
            node_id: node_id.clone(),
            target: payload.target(),
            payload,
            label: label_text(&label),
            entity_id,
            key: key.map(str::to_string),
            role,
        });
        node_id
    }

    fn rank(&mut self, entity: &EntityRecord, metric: &str) {
        let payload = NodePayload::Rank(RankQuery {
            metric: metric.to_string(),
            entity_id: entity.entity_id.clone(),
            scope: self.parsed.scope.clone(),
        });
        let display = self.catalog.metric(metric).map_or(metric, |m| m.display_name.as_str());
        let label = format!("{} rank in {}", entity.canonical_name, display);
        self.push(Some(entity), Some(metric), NodeRole::Rank, payload, label);
    }

    /// A structured aggregation node for a stat key, or a rank node for a metric.
    fn stat_or_rank(&mut self, entity: &EntityRecord, key: &str) -> Result<(), PlanError> {
        if self.catalog.metric(key).is_some() {
            self.rank(entity, key);
            return Ok(());
        }
        let stat = self.catalog.stat(key).ok_or_else(|| PlanError::UnsupportedIntent(format!("unknown key {key}")))?;
        let field = stat
            .entity_field(entity.kind)
            .ok_or_else(|| PlanError::UnsupportedIntent(format!("{key} is not tracked for {:?}", entity.kind)))?;
        let mut q = StructuredQuery::on(&stat.collection);
        q.filter.push(FilterClause::eq(field, entity.entity_id.as_str()));
        q.filter.extend(scope_filters(&self.parsed.scope, "season"));
        q.aggregates.push(AggregateSpec {
            func: stat.aggregation,
            field: stat.source_field().to_string(),
            alias: key.to_string(),
        });
        let label = format!("{} {}", entity.canonical_name, stat.display_name);
        self.push(Some(entity), Some(key), NodeRole::Stat, NodePayload::Query(q), label);
        Ok(())
    }

    fn context(&mut self, text: String, filter: ChunkFilter, entity: Option<&EntityRecord>) {
        let payload = NodePayload::Vector(VectorQuery { text, k: DEFAULT_VECTOR_K, filter, play_ids_from: None });
        self.push(entity, None, NodeRole::Context, payload, "background search".into());
    }

    fn search_text(&self) -> String {
        let mut words: Vec<String> = self.parsed.entities.iter().map(|e| e.canonical_name.to_lowercase()).collect();
        words.extend(self.parsed.context_terms.iter().cloned());
        words.join(" ")
    }

    fn build(&mut self) -> Result<(), PlanError> {
        let parsed = self.parsed;
        match &parsed.intent {
            Intent::StatLookup | Intent::StatComparison { .. } => {
                for e in &parsed.entities {
                    for key in &parsed.stat_keys {
                        self.stat_or_rank(e, key)?;
                    }
                }
                if !parsed.context_terms.is_empty() {
                    let tags = parsed.entities.iter().map(|e| e.entity_id.clone()).collect();
                    self.context(self.search_text(), ChunkFilter { entity_tags: tags, ..ChunkFilter::default() }, None);
                }
            }
            Intent::MetricVerdict { metrics } => {
                for e in &parsed.entities {
                    for m in metrics {
                        self.rank(e, m);
                    }
                }
            }
            Intent::TeamWeakness { .. } => {
                for e in &parsed.entities {
                    for m in &parsed.stat_keys {
                        self.rank(e, m);
                    }
                }
            }
            Intent::TeamMismatch { offense, defense } => {
                let find = |id: &str| parsed.entities.iter().find(|e| e.entity_id == id);
                let (Some(off), Some(def)) = (find(offense), find(defense)) else {
                    return Err(PlanError::UnsupportedIntent("mismatch teams missing".into()));
                };
                for pair in parsed.stat_keys.chunks(2) {
                    self.rank(off, &pair[0]);
                    if let Some(d) = pair.get(1) {
                        self.rank(def, d);
                    }
                }
            }
            Intent::RecordQuery { seasons } => {
                let player = &parsed.entities[0];
                let mut q = StructuredQuery::on(GAME_LOGS);
                q.filter.push(FilterClause::eq("player_id", player.entity_id.as_str()));
                q.filter.push(FilterClause::eq("played", true));
                q.filter.push(FilterClause::eq("game_type", "REG"));
                q.filter
                    .push(FilterClause::one_of("season", seasons.iter().map(|s| Scalar::Int(i64::from(*s))).collect()));
                for f in &parsed.scope.game_filter {
                    q.filter.push(FilterClause::eq(&f.field, f.value.clone()));
                }
                q.group_by.push("result".into());
                q.aggregates.push(AggregateSpec {
                    func: Aggregation::Count,
                    field: "result".into(),
                    alias: "games".into(),
                });
                q.sort = Some(SortSpec { key: "result".into(), descending: true });
                let label = format!("{} game record", player.canonical_name);
                self.push(Some(player), None, NodeRole::Record, NodePayload::Query(q), label);
            }
            Intent::RosterBuild { positions, metric, week } => {
                for pos in positions {
                    let mut q = StructuredQuery::on(METRIC_RANKS);
                    q.filter.push(FilterClause::eq("metric", metric.as_str()));
                    q.filter.push(FilterClause::eq("season", i64::from(parsed.scope.season)));
                    q.filter.push(FilterClause::eq("week", i64::from(*week)));
                    q.filter.push(FilterClause::eq("position", pos.as_str()));
                    q.select = Some(["entity_id", "position", "team", "value"].iter().map(|s| s.to_string()).collect());
                    q.sort = Some(SortSpec { key: "value".into(), descending: true });
                    q.limit = Some(1);
                    let label = format!("best {pos} by {metric}");
                    self.push(
                        None,
                        Some(metric),
                        NodeRole::Roster { position: pos.clone() },
                        NodePayload::Query(q),
                        label,
                    );
                }
            }
            Intent::CapQuery { years } => {
                let player = parsed
                    .entities
                    .iter()
                    .find(|e| e.kind == EntityKind::Player)
                    .ok_or_else(|| PlanError::UnsupportedIntent("cap query without player".into()))?;
                let team = parsed.entities.iter().find(|e| e.kind == EntityKind::Team);
                let stat = parsed.stat_keys.first().cloned().unwrap_or_else(|| "cap_hit".into());
                let field = self.catalog.stat(&stat).map_or(stat.clone(), |s| s.source_field().to_string());
                let mut q = StructuredQuery::on(CAP_TABLE);
                q.filter.push(FilterClause::eq("player_id", player.entity_id.as_str()));
                q.filter.push(FilterClause::one_of("year", years.iter().map(|y| Scalar::Int(i64::from(*y))).collect()));
                if let Some(t) = team {
                    q.filter.push(FilterClause::eq("team_id", t.entity_id.as_str()));
                }
                q.group_by.push("year".into());
                q.aggregates.push(AggregateSpec { func: Aggregation::Sum, field, alias: stat.clone() });
                q.sort = Some(SortSpec { key: "year".into(), descending: false });
                let label = format!("{} {}", player.canonical_name, label_text(&stat));
                self.push(Some(player), Some(&stat), NodeRole::Cap, NodePayload::Query(q), label);
            }
            Intent::ContextSearch => {
                let tags = parsed.entities.iter().map(|e| e.entity_id.clone()).collect();
                self.context(self.search_text(), ChunkFilter { entity_tags: tags, ..ChunkFilter::default() }, None);
            }
            Intent::VideoLookup => {
                let subject = &parsed.entities[0];
                let field = match subject.kind {
                    EntityKind::Player => "player_id",
                    EntityKind::Team => "offense_team",
                };
                let mut q = StructuredQuery::on(PLAYS);
                q.filter.push(FilterClause::eq(field, subject.entity_id.as_str()));
                q.filter.extend(scope_filters(&parsed.scope, "season"));
                q.select = Some(["play_id", "week", "description"].iter().map(|s| s.to_string()).collect());
                q.sort = Some(SortSpec { key: "play_id".into(), descending: false });
                let plays = self.push(
                    Some(subject),
                    None,
                    NodeRole::Plays,
                    NodePayload::Query(q),
                    format!("{} matching plays", subject.canonical_name),
                );
                let media = self.push(
                    Some(subject),
                    None,
                    NodeRole::Media,
                    NodePayload::MediaLinks { plays_from: plays.clone() },
                    "video links".into(),
                );
                let player_id = (subject.kind == EntityKind::Player).then(|| subject.entity_id.clone());
                let tracking = self.push(
                    Some(subject),
                    None,
                    NodeRole::Tracking,
                    NodePayload::Tracking(TrackingQuery {
                        play_ids_from: Some(plays.clone()),
                        play_ids: Vec::new(),
                        player_id,
                    }),
                    "tracking traces".into(),
                );
                let transcript = self.push(
                    Some(subject),
                    None,
                    NodeRole::Context,
                    NodePayload::Vector(VectorQuery {
                        text: self.search_text(),
                        k: DEFAULT_VECTOR_K,
                        filter: ChunkFilter { source_kinds: vec![SourceKind::Transcript], ..ChunkFilter::default() },
                        play_ids_from: Some(plays.clone()),
                    }),
                    "commentary for matching plays".into(),
                );
                for to in [media, tracking, transcript] {
                    self.edges.push((plays.clone(), to));
                }
            }
        }
        Ok(())
    }
}

/// Plan for one parsed prompt.
pub fn build_plan(parsed: &ParsedQuery, catalog: &Catalog) -> Result<QueryPlan, PlanError> {
    let mut planner = Planner { parsed, catalog, nodes: Vec::new(), edges: Vec::new() };
    planner.build()?;
    if planner.nodes.is_empty() {
        return Err(PlanError::UnsupportedIntent(parsed.intent.kind().to_string()));
    }
    QueryPlan::from_parts(planner.nodes, planner.edges, Some(parsed.clone()))
}
