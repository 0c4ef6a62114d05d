//! Answer synthesis.
//!
//! Sub-results are first reduced to [`Finding`]s, plain facts with every name
//! and number already resolved. A [`Generator`] turns those into prose; tables,
//! media links and the verdict are assembled here and never pass through the
//! generator, so swapping generators cannot change them.

mod format;
mod template;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, EntityKind, EntityRecord, FieldMatch, Population};
use crate::interpreter::{Comparator, Intent, ParsedQuery, Side};
use crate::plan::{NodeRole, PlanNode, QueryPlan};
use crate::store::{Provenance, RankResult, ResultTable, METRIC_RANKS};
use crate::text::{find_phrase, tokenize};
use crate::value::Scalar;
use crate::vector::SourceKind;
use crate::SeasonClock;

pub use format::{decimal2, money, number, ordinal, oxford, thousands};
pub use template::TemplateGenerator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub play_id: String,
    pub player_id: String,
    pub max_speed: f64,
    pub mean_speed: f64,
    pub cells_visited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkHit {
    pub chunk_id: String,
    pub text: String,
    pub source_kind: SourceKind,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub play_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum SubAnswerBody {
    Table(ResultTable),
    Rank(RankResult),
    Kinematics(Vec<TraceSummary>),
    Chunks(Vec<ChunkHit>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAnswer {
    pub node_id: String,
    #[serde(flatten)]
    pub body: SubAnswerBody,
    pub source_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    Timeout,
    QueueFull,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node_id: String,
    #[serde(flatten)]
    pub reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum NodeOutcome {
    Answered(SubAnswer),
    Failed(NodeFailure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaLink {
    pub play_id: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictSide {
    pub entity_id: String,
    /// Metric keys this side ranks better in.
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    /// `None` when the metric wins are even.
    pub winner: Option<String>,
    pub sides: Vec<VerdictSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub tables: Vec<ResultTable>,
    pub media_links: Vec<MediaLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("every sub-query failed")]
    NoUsableSubAnswers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub media_base_url: String,
    pub clock: SeasonClock,
}

/// An entity as it should be named in prose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Named {
    pub entity_id: String,
    pub name: String,
    pub short: String,
    pub is_team: bool,
}

impl Named {
    pub fn of(e: &EntityRecord) -> Self {
        Named {
            entity_id: e.entity_id.clone(),
            name: e.canonical_name.clone(),
            short: e.short_name().to_string(),
            is_team: e.kind == EntityKind::Team,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeView {
    pub season: u16,
    pub through_week: Option<u8>,
    /// Scope is the engine clock's season to date.
    pub current: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Upper,
    Middle,
    Lower,
}

impl Tier {
    /// Thirds of the ranked population.
    pub fn of(rank: u32, population: u32) -> Tier {
        let (r, p) = (u64::from(rank), u64::from(population.max(1)));
        if r * 3 <= p {
            Tier::Upper
        } else if r * 3 <= p * 2 {
            Tier::Middle
        } else {
            Tier::Lower
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Tier::Upper => "upper",
            Tier::Middle => "middle",
            Tier::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLine {
    pub subject: Named,
    /// "quarterback" for players with a known position.
    pub role: Option<String>,
    pub team: Option<String>,
    pub metric: String,
    pub short_metric: Option<String>,
    pub rank: u32,
    pub population: u32,
    pub population_noun: String,
    pub value: Option<f64>,
    /// Set when the prompt asked for a valuation ("trade value").
    pub tier: Option<(Tier, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchPair {
    pub offense_metric: String,
    pub offense_rank: u32,
    pub defense_metric: String,
    pub defense_rank: u32,
    pub population: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterLine {
    pub position: String,
    pub name: Option<String>,
    pub team: Option<String>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayLine {
    pub play_id: String,
    pub description: Option<String>,
}

/// One resolved fact for the generator to phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    Comparison {
        stat: String,
        unit: String,
        comparator: Comparator,
        values: Vec<(Named, Scalar)>,
        scope: ScopeView,
        qualifiers: Vec<String>,
    },
    StatValue {
        subject: Named,
        stat: String,
        unit: String,
        value: Scalar,
        scope: ScopeView,
        qualifiers: Vec<String>,
    },
    Rank(RankLine),
    Verdict {
        sides: [Named; 2],
        winner: Option<usize>,
        wins: [Vec<String>; 2],
        ties: Vec<String>,
        role: String,
        season: u16,
        week: u8,
    },
    Record {
        player: Named,
        role: Option<String>,
        team: Option<String>,
        seasons: Vec<u16>,
        wins: i64,
        losses: i64,
        ties: i64,
        qualifiers: Vec<String>,
    },
    Weakness {
        team: Named,
        side: Side,
        metric: String,
        rank: u32,
        population: u32,
        season: u16,
        week: u8,
    },
    Mismatch {
        offense: Named,
        defense: Named,
        pairs: Vec<MismatchPair>,
        season: u16,
        week: u8,
    },
    Cap {
        player: Named,
        team: Option<String>,
        stat_key: String,
        stat: String,
        rows: Vec<(u16, i64)>,
        missing: Vec<u16>,
    },
    Roster {
        season: u16,
        metric: String,
        lines: Vec<RosterLine>,
    },
    Plays {
        subject: Named,
        plays: Vec<PlayLine>,
        qualifiers: Vec<String>,
        scope: ScopeView,
    },
    Motion {
        subject: Named,
        traces: Vec<TraceSummary>,
    },
    Excerpts {
        hits: Vec<ChunkHit>,
        commentary: bool,
    },
    MediaAttached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureNote {
    pub label: String,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSkeleton {
    pub findings: Vec<Finding>,
    pub failures: Vec<FailureNote>,
}

/// Turns findings into answer text.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, skeleton: &AnswerSkeleton) -> String;
}

fn role_noun(position: Option<&str>) -> Option<&'static str> {
    Some(match position? {
        "QB" => "quarterback",
        "RB" => "running back",
        "WR" => "wide receiver",
        "TE" => "tight end",
        "OT" => "offensive tackle",
        "IOL" => "interior offensive lineman",
        "EDGE" => "edge rusher",
        "DT" => "defensive tackle",
        "ILB" | "OB-LB" => "linebacker",
        "CB" => "cornerback",
        "S" => "safety",
        _ => return None,
    })
}

/// Prose fragment for one equality filter ("against AFC teams").
pub fn qualifier(f: &FieldMatch) -> String {
    let value = match &f.value {
        Scalar::Text(s) => s.replace('_', " "),
        other => format!("{other}"),
    };
    match f.field.as_str() {
        "opponent_conference" => format!("against {value} teams"),
        "coverage" => format!("against {}", title_words(&value)),
        "concept" => format!("on {value} plays"),
        "half" => match f.value.as_i64() {
            Some(1) => "in the first half".into(),
            Some(2) => "in the second half".into(),
            _ => format!("in half {value}"),
        },
        "week" => format!("in week {value}"),
        field => format!("with {} {value}", field.replace('_', " ")),
    }
}

fn title_words(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(first) => first.to_uppercase().chain(c).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

struct Ctx<'a> {
    parsed: &'a ParsedQuery,
    plan: &'a QueryPlan,
    answered: BTreeMap<&'a str, &'a SubAnswer>,
    catalog: &'a Catalog,
    options: &'a SynthOptions,
}

impl<'a> Ctx<'a> {
    fn nodes<'b>(&'b self, pred: impl Fn(&NodeRole) -> bool + 'b) -> impl Iterator<Item = &'a PlanNode> + 'b {
        self.plan.nodes.iter().filter(move |n| pred(&n.role))
    }

    fn table(&self, node: &PlanNode) -> Option<&'a ResultTable> {
        match &self.answered.get(node.node_id.as_str())?.body {
            SubAnswerBody::Table(t) => Some(t),
            _ => None,
        }
    }

    fn rank(&self, node: &PlanNode) -> Option<&'a RankResult> {
        match &self.answered.get(node.node_id.as_str())?.body {
            SubAnswerBody::Rank(r) => Some(r),
            _ => None,
        }
    }

    fn entity(&self, id: &str) -> Option<&'a EntityRecord> {
        self.catalog.entity(id)
    }

    fn named(&self, id: &str) -> Named {
        match self.entity(id) {
            Some(e) => Named::of(e),
            None => Named { entity_id: id.into(), name: id.into(), short: id.into(), is_team: false },
        }
    }

    fn team_name(&self, player: &EntityRecord, season: u16) -> Option<String> {
        let id = player.team_in(season)?;
        Some(self.entity(id).map_or(id.to_string(), |t| t.canonical_name.clone()))
    }

    fn metric_name(&self, key: &str) -> String {
        self.catalog
            .metric(key)
            .map(|m| m.display_name.clone())
            .or_else(|| self.catalog.stat(key).map(|s| s.display_name.clone()))
            .unwrap_or_else(|| key.replace('_', " "))
    }

    fn scope_view(&self) -> ScopeView {
        let s = &self.parsed.scope;
        let clock = self.options.clock;
        ScopeView {
            season: s.season,
            through_week: s.through_week,
            current: s.season == clock.season && s.through_week == Some(clock.week),
        }
    }

    /// Qualifiers from the scope's filters, minus the ones the phrasing already covers.
    fn qualifiers(&self) -> Vec<String> {
        self.parsed.scope.game_filter.iter().map(qualifier).collect()
    }

    fn asks(&self, phrase: &str) -> bool {
        find_phrase(&tokenize(&self.parsed.raw_prompt), &tokenize(phrase)).is_some()
    }

    fn rank_line(&self, r: &RankResult) -> RankLine {
        let entity = self.entity(&r.entity_id);
        let metric = self.catalog.metric(&r.metric);
        let is_team = entity.is_some_and(|e| e.kind == EntityKind::Team)
            || metric.is_some_and(|m| m.population == Population::Team);
        let role = entity.and_then(|e| role_noun(e.position.as_deref()));
        let population_noun =
            if is_team { "teams".to_string() } else { role.map_or("players".to_string(), |r| format!("{r}s")) };
        let tier = self.asks("trade value").then(|| (Tier::of(r.rank, r.population), "trade value".to_string()));
        RankLine {
            subject: self.named(&r.entity_id),
            role: role.map(str::to_string),
            team: entity.filter(|e| e.kind == EntityKind::Player).and_then(|e| self.team_name(e, r.season)),
            metric: self.metric_name(&r.metric),
            short_metric: metric.and_then(|m| m.short_name.clone()),
            rank: r.rank,
            population: r.population,
            population_noun,
            value: r.value,
            tier,
        }
    }
}

fn rank_table(results: &[&RankResult], catalog: &Catalog) -> ResultTable {
    let columns = ["entity", "metric", "rank", "population", "value"].iter().map(|s| s.to_string()).collect();
    let rows = results
        .iter()
        .map(|r| {
            let name = catalog.entity(&r.entity_id).map_or(r.entity_id.clone(), |e| e.canonical_name.clone());
            let metric = catalog.metric(&r.metric).map_or(r.metric.clone(), |m| m.display_name.clone());
            vec![
                Scalar::Text(name),
                Scalar::Text(metric),
                Scalar::Int(i64::from(r.rank)),
                Scalar::Int(i64::from(r.population)),
                r.value.map_or(Scalar::Null, Scalar::Float),
            ]
        })
        .collect();
    ResultTable { columns, rows, provenance: Provenance { collection: METRIC_RANKS.into(), filter: Vec::new() } }
}

/// Reduces sub-results to an [`Answer`].
pub fn synthesize(
    parsed: &ParsedQuery,
    plan: &QueryPlan,
    outcomes: &BTreeMap<String, NodeOutcome>,
    catalog: &Catalog,
    generator: &dyn Generator,
    options: &SynthOptions,
) -> Result<Answer, SynthError> {
    let mut answered = BTreeMap::new();
    let mut failures = Vec::new();
    for node in &plan.nodes {
        match outcomes.get(&node.node_id) {
            Some(NodeOutcome::Answered(a)) => {
                answered.insert(node.node_id.as_str(), a);
            }
            Some(NodeOutcome::Failed(f)) => {
                failures.push(FailureNote { label: node.label.clone(), reason: f.reason.clone() })
            }
            None => failures
                .push(FailureNote { label: node.label.clone(), reason: FailureReason::Error("no result".into()) }),
        }
    }
    if answered.is_empty() {
        return Err(SynthError::NoUsableSubAnswers);
    }
    let ctx = Ctx { parsed, plan, answered, catalog, options };
    let mut out = Assembly::default();
    match &parsed.intent {
        Intent::StatLookup | Intent::StatComparison { .. } => stats(&ctx, &mut out),
        Intent::MetricVerdict { metrics } => verdict(&ctx, metrics, &mut out),
        Intent::RecordQuery { seasons } => record(&ctx, seasons, &mut out),
        Intent::TeamWeakness { side } => weakness(&ctx, *side, &mut out),
        Intent::TeamMismatch { offense, defense } => mismatch(&ctx, offense, defense, &mut out),
        Intent::RosterBuild { metric, .. } => roster(&ctx, metric, &mut out),
        Intent::CapQuery { years } => cap(&ctx, years, &mut out),
        Intent::ContextSearch => context(&ctx, false, &mut out),
        Intent::VideoLookup => video(&ctx, &mut out),
    }
    let skeleton = AnswerSkeleton { findings: out.findings, failures: failures.clone() };
    let text = generator.generate(&skeleton);
    let failures = failures
        .iter()
        .map(|f| match &f.reason {
            FailureReason::Timeout => format!("{}: timed out", f.label),
            FailureReason::QueueFull => format!("{}: agent queue full", f.label),
            FailureReason::Error(e) => format!("{}: {e}", f.label),
        })
        .collect();
    Ok(Answer { text, tables: out.tables, media_links: out.media_links, verdict: out.verdict, failures })
}

#[derive(Default)]
struct Assembly {
    findings: Vec<Finding>,
    tables: Vec<ResultTable>,
    media_links: Vec<MediaLink>,
    verdict: Option<Verdict>,
}

fn stats(ctx: &Ctx<'_>, out: &mut Assembly) {
    let comparing = matches!(ctx.parsed.intent, Intent::StatComparison { .. });
    let scope = ctx.scope_view();
    for key in &ctx.parsed.stat_keys {
        let mut values: Vec<(Named, Scalar)> = Vec::new();
        let mut rows = Vec::new();
        let mut provenance = None;
        for node in ctx.nodes(|r| *r == NodeRole::Stat).filter(|n| n.key.as_deref() == Some(key.as_str())) {
            let (Some(table), Some(id)) = (ctx.table(node), node.entity_id.as_deref()) else { continue };
            let value = table.cell(0, key).cloned().unwrap_or(Scalar::Null);
            let named = ctx.named(id);
            rows.push(vec![Scalar::Text(named.name.clone()), value.clone()]);
            provenance.get_or_insert_with(|| table.provenance.clone());
            values.push((named, value));
        }
        if let Some(provenance) = provenance {
            let stat = ctx.catalog.stat(key);
            let name = stat.map_or(key.clone(), |s| s.display_name.to_lowercase());
            let unit = stat.map_or(String::new(), |s| s.unit.clone());
            out.tables.push(ResultTable { columns: vec!["name".into(), key.clone()], rows, provenance });
            if comparing && values.len() >= 2 {
                let comparator = match ctx.parsed.intent {
                    Intent::StatComparison { comparator } => comparator,
                    _ => Comparator::More,
                };
                out.findings.push(Finding::Comparison {
                    stat: name,
                    unit,
                    comparator,
                    values,
                    scope,
                    qualifiers: ctx.qualifiers(),
                });
            } else {
                for (subject, value) in values {
                    out.findings.push(Finding::StatValue {
                        subject,
                        stat: name.clone(),
                        unit: unit.clone(),
                        value,
                        scope,
                        qualifiers: ctx.qualifiers(),
                    });
                }
            }
        }
        let ranks: Vec<&RankResult> = ctx
            .nodes(|r| *r == NodeRole::Rank)
            .filter(|n| n.key.as_deref() == Some(key.as_str()))
            .filter_map(|n| ctx.rank(n))
            .collect();
        if !ranks.is_empty() {
            out.tables.push(rank_table(&ranks, ctx.catalog));
            out.findings.extend(ranks.iter().map(|r| Finding::Rank(ctx.rank_line(r))));
        }
    }
    context(ctx, false, out);
}

fn verdict(ctx: &Ctx<'_>, metrics: &[String], out: &mut Assembly) {
    let entities = &ctx.parsed.entities;
    if entities.len() < 2 {
        return;
    }
    let ids = [entities[0].entity_id.as_str(), entities[1].entity_id.as_str()];
    let lookup = |id: &str, m: &str| {
        ctx.nodes(|r| *r == NodeRole::Rank)
            .find(|n| n.entity_id.as_deref() == Some(id) && n.key.as_deref() == Some(m))
            .and_then(|n| ctx.rank(n))
    };
    let mut wins: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut won_keys: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut ties = Vec::new();
    let mut all = Vec::new();
    let mut when: Option<(u16, u8)> = None;
    for m in metrics {
        let (Some(a), Some(b)) = (lookup(ids[0], m), lookup(ids[1], m)) else { continue };
        all.push(a);
        all.push(b);
        when.get_or_insert((a.season, a.week));
        let name = ctx.metric_name(m);
        match a.rank.cmp(&b.rank) {
            core::cmp::Ordering::Less => {
                wins[0].push(name);
                won_keys[0].push(m.clone());
            }
            core::cmp::Ordering::Greater => {
                wins[1].push(name);
                won_keys[1].push(m.clone());
            }
            core::cmp::Ordering::Equal => ties.push(name),
        }
    }
    let Some((season, week)) = when else { return };
    let winner = match won_keys[0].len().cmp(&won_keys[1].len()) {
        core::cmp::Ordering::Greater => Some(0),
        core::cmp::Ordering::Less => Some(1),
        core::cmp::Ordering::Equal => None,
    };
    let role = match (entities[0].position.as_deref(), entities[1].position.as_deref()) {
        (Some(a), Some(b)) if a == b => role_noun(Some(a)).unwrap_or("player"),
        _ => "player",
    };
    out.verdict = Some(Verdict {
        winner: winner.map(|i| ids[i].to_string()),
        sides: (0..2).map(|i| VerdictSide { entity_id: ids[i].to_string(), metrics: won_keys[i].clone() }).collect(),
    });
    out.tables.push(rank_table(&all, ctx.catalog));
    out.findings.push(Finding::Verdict {
        sides: [Named::of(&entities[0]), Named::of(&entities[1])],
        winner,
        wins,
        ties,
        role: role.to_string(),
        season,
        week,
    });
}

fn record(ctx: &Ctx<'_>, seasons: &[u16], out: &mut Assembly) {
    let Some(player) = ctx.parsed.entities.first() else { return };
    let Some(table) = ctx.nodes(|r| *r == NodeRole::Record).find_map(|n| ctx.table(n)) else { return };
    let count = |result: &str| {
        (0..table.rows.len())
            .find(|&i| table.cell(i, "result").and_then(Scalar::as_str) == Some(result))
            .and_then(|i| table.cell(i, "games").and_then(Scalar::as_i64))
            .unwrap_or(0)
    };
    let teams: BTreeSet<&str> = seasons.iter().filter_map(|s| player.team_in(*s)).collect();
    let team = match teams.iter().next() {
        Some(id) if teams.len() == 1 => Some(ctx.entity(id).map_or(id.to_string(), |t| t.canonical_name.clone())),
        _ => None,
    };
    out.tables.push(table.clone());
    out.findings.push(Finding::Record {
        player: Named::of(player),
        role: role_noun(player.position.as_deref()).map(str::to_string),
        team,
        seasons: seasons.to_vec(),
        wins: count("W"),
        losses: count("L"),
        ties: count("T"),
        qualifiers: ctx.qualifiers(),
    });
}

fn weakness(ctx: &Ctx<'_>, side: Side, out: &mut Assembly) {
    let Some(team) = ctx.parsed.entities.first() else { return };
    let ranks: Vec<&RankResult> = ctx.nodes(|r| *r == NodeRole::Rank).filter_map(|n| ctx.rank(n)).collect();
    // worst = numerically largest rank; first in metric order on ties
    let Some(worst) = ranks.iter().fold(None::<&RankResult>, |acc, r| match acc {
        Some(a) if a.rank >= r.rank => Some(a),
        _ => Some(r),
    }) else {
        return;
    };
    out.tables.push(rank_table(&ranks, ctx.catalog));
    out.findings.push(Finding::Weakness {
        team: Named::of(team),
        side,
        metric: ctx.metric_name(&worst.metric),
        rank: worst.rank,
        population: worst.population,
        season: worst.season,
        week: worst.week,
    });
}

fn mismatch(ctx: &Ctx<'_>, offense: &str, defense: &str, out: &mut Assembly) {
    let lookup = |id: &str, m: &str| {
        ctx.nodes(|r| *r == NodeRole::Rank)
            .find(|n| n.entity_id.as_deref() == Some(id) && n.key.as_deref() == Some(m))
            .and_then(|n| ctx.rank(n))
    };
    let mut pairs = Vec::new();
    let mut all = Vec::new();
    let mut when = None;
    for pair in ctx.parsed.stat_keys.chunks(2) {
        let [o, d] = pair else { continue };
        let (Some(ro), Some(rd)) = (lookup(offense, o), lookup(defense, d)) else { continue };
        when.get_or_insert((ro.season, ro.week));
        all.push(ro);
        all.push(rd);
        pairs.push(MismatchPair {
            offense_metric: ctx.metric_name(o),
            offense_rank: ro.rank,
            defense_metric: ctx.metric_name(d),
            defense_rank: rd.rank,
            population: ro.population,
        });
    }
    let Some((season, week)) = when else { return };
    out.tables.push(rank_table(&all, ctx.catalog));
    out.findings.push(Finding::Mismatch {
        offense: ctx.named(offense),
        defense: ctx.named(defense),
        pairs,
        season,
        week,
    });
}

fn roster(ctx: &Ctx<'_>, metric: &str, out: &mut Assembly) {
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for node in ctx.plan.nodes.iter() {
        let NodeRole::Roster { position } = &node.role else { continue };
        let Some(table) = ctx.table(node) else { continue };
        let id = table.cell(0, "entity_id").and_then(Scalar::as_str);
        let name = id.map(|i| ctx.named(i).name);
        let team = table
            .cell(0, "team")
            .and_then(Scalar::as_str)
            .map(|t| ctx.entity(t).and_then(|e| e.abbreviation.clone()).unwrap_or_else(|| t.to_string()));
        let value = table.cell(0, "value").and_then(Scalar::as_f64);
        rows.push(vec![
            Scalar::text(position.clone()),
            name.clone().map_or(Scalar::Null, Scalar::Text),
            team.clone().map_or(Scalar::Null, Scalar::Text),
            value.map_or(Scalar::Null, Scalar::Float),
        ]);
        lines.push(RosterLine { position: position.clone(), name, team, value });
    }
    if lines.is_empty() {
        return;
    }
    let short =
        ctx.catalog.metric(metric).and_then(|m| m.short_name.clone()).unwrap_or_else(|| ctx.metric_name(metric));
    let filter =
        ctx.plan.nodes.iter().find_map(|n| ctx.table(n)).map(|t| t.provenance.filter.clone()).unwrap_or_default();
    out.tables.push(ResultTable {
        columns: ["position", "player", "team", metric].iter().map(|s| s.to_string()).collect(),
        rows,
        provenance: Provenance { collection: METRIC_RANKS.into(), filter },
    });
    out.findings.push(Finding::Roster { season: ctx.parsed.scope.season, metric: short, lines });
}

fn cap(ctx: &Ctx<'_>, years: &[u16], out: &mut Assembly) {
    let Some(player) = ctx.parsed.entities.iter().find(|e| e.kind == EntityKind::Player) else { return };
    let Some(node) = ctx.nodes(|r| *r == NodeRole::Cap).next() else { return };
    let Some(table) = ctx.table(node) else { return };
    let key = node.key.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for i in 0..table.rows.len() {
        let year = table.cell(i, "year").and_then(Scalar::as_i64).and_then(|y| u16::try_from(y).ok());
        let amount = table.cell(i, &key).and_then(Scalar::as_i64);
        if let (Some(y), Some(a)) = (year, amount) {
            rows.push((y, a));
        }
    }
    let missing = years.iter().copied().filter(|y| !rows.iter().any(|(r, _)| r == y)).collect();
    let team = ctx
        .parsed
        .entities
        .iter()
        .find(|e| e.kind == EntityKind::Team)
        .map(|t| t.canonical_name.clone())
        .or_else(|| years.first().and_then(|y| ctx.team_name(player, *y)));
    out.tables.push(table.clone());
    out.findings.push(Finding::Cap {
        player: Named::of(player),
        team,
        stat: ctx.metric_name(&key).to_lowercase(),
        stat_key: key,
        rows,
        missing,
    });
}

fn context(ctx: &Ctx<'_>, commentary: bool, out: &mut Assembly) {
    for node in ctx.nodes(|r| *r == NodeRole::Context) {
        if let Some(SubAnswer { body: SubAnswerBody::Chunks(hits), .. }) = ctx.answered.get(node.node_id.as_str()) {
            out.findings.push(Finding::Excerpts { hits: hits.clone(), commentary });
        }
    }
}

fn video(ctx: &Ctx<'_>, out: &mut Assembly) {
    let Some(subject) = ctx.parsed.entities.first() else { return };
    if let Some(table) = ctx.nodes(|r| *r == NodeRole::Plays).find_map(|n| ctx.table(n)) {
        let plays = (0..table.rows.len())
            .filter_map(|i| {
                let play_id = table.cell(i, "play_id")?.as_str()?.to_string();
                let description = table.cell(i, "description").and_then(Scalar::as_str).map(str::to_string);
                Some(PlayLine { play_id, description })
            })
            .collect();
        out.tables.push(table.clone());
        out.findings.push(Finding::Plays {
            subject: Named::of(subject),
            plays,
            qualifiers: ctx.qualifiers(),
            scope: ctx.scope_view(),
        });
    }
    if let Some(media) = ctx.nodes(|r| *r == NodeRole::Media).find_map(|n| ctx.table(n)) {
        let base = ctx.options.media_base_url.trim_end_matches('/');
        for i in 0..media.rows.len() {
            if let Some(id) = media.cell(i, "play_id").and_then(Scalar::as_str) {
                out.media_links.push(MediaLink { play_id: id.to_string(), url: format!("{base}/plays/{id}") });
            }
        }
        if !out.media_links.is_empty() {
            out.findings.push(Finding::MediaAttached);
        }
    }
    for node in ctx.nodes(|r| *r == NodeRole::Tracking) {
        if let Some(SubAnswer { body: SubAnswerBody::Kinematics(traces), .. }) = ctx.answered.get(node.node_id.as_str())
        {
            if !traces.is_empty() {
                out.findings.push(Finding::Motion { subject: Named::of(subject), traces: traces.clone() });
            }
        }
    }
    context(ctx, true, out);
}

#[cfg(test)]
mod tests;
