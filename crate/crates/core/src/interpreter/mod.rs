//! Prompt interpretation: tokens -> pattern -> grounded [`ParsedQuery`].
//!
//! A prompt is matched against an ordered pattern grammar, entity mentions are
//! resolved through the catalog, and stat vocabulary goes through the synonym
//! lexicon. Follow-up prompts fill missing entities and scope from dialogue
//! memory and record which fields were inherited.

mod lexicon;
mod parse;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{EntityRecord, Scope};

pub use lexicon::{Deixis, Grammar, Lexicon, Pattern, PatternIntent, RosterConfig, SideMetrics, StatRule};
pub use parse::{ConfigError, Interpreter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    StatLookup,
    StatComparison,
    MetricVerdict,
    RecordQuery,
    TeamWeakness,
    TeamMismatch,
    RosterBuild,
    CapQuery,
    ContextSearch,
    VideoLookup,
}

impl IntentKind {
    pub const ALL: [IntentKind; 10] = [
        IntentKind::StatLookup,
        IntentKind::StatComparison,
        IntentKind::MetricVerdict,
        IntentKind::RecordQuery,
        IntentKind::TeamWeakness,
        IntentKind::TeamMismatch,
        IntentKind::RosterBuild,
        IntentKind::CapQuery,
        IntentKind::ContextSearch,
        IntentKind::VideoLookup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentKind::StatLookup => "stat_lookup",
            IntentKind::StatComparison => "stat_comparison",
            IntentKind::MetricVerdict => "metric_verdict",
            IntentKind::RecordQuery => "record_query",
            IntentKind::TeamWeakness => "team_weakness",
            IntentKind::TeamMismatch => "team_mismatch",
            IntentKind::RosterBuild => "roster_build",
            IntentKind::CapQuery => "cap_query",
            IntentKind::ContextSearch => "context_search",
            IntentKind::VideoLookup => "video_lookup",
        }
    }
}

impl fmt::Display for IntentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    More,
    Fewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Offense,
    Defense,
}

impl Side {
    pub fn adjective(self) -> &'static str {
        match self {
            Side::Offense => "offensive",
            Side::Defense => "defensive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intent {
    StatLookup,
    StatComparison {
        comparator: Comparator,
    },
    MetricVerdict {
        metrics: Vec<String>,
    },
    RecordQuery {
        seasons: Vec<u16>,
    },
    TeamWeakness {
        side: Side,
    },
    /// Entity ids of the attacking and defending teams.
    TeamMismatch {
        offense: String,
        defense: String,
    },
    RosterBuild {
        positions: Vec<String>,
        metric: String,
        week: u8,
    },
    CapQuery {
        years: Vec<u16>,
    },
    ContextSearch,
    VideoLookup,
}

impl Intent {
    pub fn kind(&self) -> IntentKind {
        match self {
            Intent::StatLookup => IntentKind::StatLookup,
            Intent::StatComparison { .. } => IntentKind::StatComparison,
            Intent::MetricVerdict { .. } => IntentKind::MetricVerdict,
            Intent::RecordQuery { .. } => IntentKind::RecordQuery,
            Intent::TeamWeakness { .. } => IntentKind::TeamWeakness,
            Intent::TeamMismatch { .. } => IntentKind::TeamMismatch,
            Intent::RosterBuild { .. } => IntentKind::RosterBuild,
            Intent::CapQuery { .. } => IntentKind::CapQuery,
            Intent::ContextSearch => IntentKind::ContextSearch,
            Intent::VideoLookup => IntentKind::VideoLookup,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InheritedField {
    Entities,
    StatKeys,
    Scope,
}

impl InheritedField {
    pub fn as_str(self) -> &'static str {
        match self {
            InheritedField::Entities => "entities",
            InheritedField::StatKeys => "stat_keys",
            InheritedField::Scope => "scope",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub intent: Intent,
    /// In prompt order, inherited entities after explicit ones.
    pub entities: Vec<EntityRecord>,
    /// Stat or metric keys, all present in the catalog.
    pub stat_keys: Vec<String>,
    pub scope: Scope,
    pub raw_prompt: String,
    pub inherited: BTreeSet<InheritedField>,
    pub pattern_id: String,
    /// Content words forwarded to unstructured search.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_terms: Vec<String>,
}

impl ParsedQuery {
    pub fn entity_ids(&self) -> Vec<&str> {
        self.entities.iter().map(|e| e.entity_id.as_str()).collect()
    }
}

/// A prompt with its resolved scope and the memory context handed to interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    /// The user's text, unchanged.
    pub original: String,
    pub injected_scope: Scope,
    /// (label, text) snippets from memory and the catalog.
    pub injected_context: Vec<(String, String)>,
    pub clock: crate::SeasonClock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternHint {
    pub id: String,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("could not interpret {prompt:?}")]
    Unparseable { prompt: String, nearest: Vec<PatternHint> },
    #[error("no player or team matches {mention:?}")]
    UnresolvedEntity { mention: String },
    #[error("this question needs earlier context ({needed}) that the conversation does not have")]
    MissingContext { needed: String },
}

fn describe_scope(scope: &Scope) -> String {
    let mut s = format!("season {}", scope.season);
    if let Some(w) = scope.through_week {
        s.push_str(&format!(" through week {w}"));
    }
    for f in &scope.game_filter {
        s.push_str(&format!(", {} = {}", f.field, f.value));
    }
    s
}

/// Human-readable account of how a prompt was understood.
pub fn explain_parse(parsed: &ParsedQuery) -> String {
    let params = match &parsed.intent {
        Intent::StatComparison { comparator } => format!(" (comparator {comparator:?})"),
        Intent::MetricVerdict { metrics } => format!(" (metrics {})", metrics.join(", ")),
        Intent::RecordQuery { seasons } => {
            format!(" (seasons {})", seasons.iter().map(|s| format!("{s}")).collect::<Vec<_>>().join(", "))
        }
        Intent::TeamWeakness { side } => format!(" (side {side:?})"),
        Intent::TeamMismatch { offense, defense } => format!(" (offense {offense}, defense {defense})"),
        Intent::RosterBuild { positions, metric, week } => {
            format!(" ({metric} at week {week} for {})", positions.join(", "))
        }
        Intent::CapQuery { years } => {
            format!(" (years {})", years.iter().map(|s| format!("{s}")).collect::<Vec<_>>().join(", "))
        }
        _ => String::new(),
    };
    let entities: Vec<String> =
        parsed.entities.iter().map(|e| format!("{} [{}]", e.canonical_name, e.entity_id)).collect();
    let inherited: Vec<&str> = parsed.inherited.iter().map(|f| f.as_str()).collect();
    let mut out = String::new();
    out.push_str(&format!("pattern: {}\n", parsed.pattern_id));
    out.push_str(&format!("intent: {}{}\n", parsed.intent.kind(), params));
    out.push_str(&format!("entities: {}\n", if entities.is_empty() { "none".into() } else { entities.join(", ") }));
    out.push_str(&format!(
        "stat_keys: {}\n",
        if parsed.stat_keys.is_empty() { "none".into() } else { parsed.stat_keys.join(", ") }
    ));
    out.push_str(&format!("scope: {}\n", describe_scope(&parsed.scope)));
    if !parsed.context_terms.is_empty() {
        out.push_str(&format!("context_terms: {}\n", parsed.context_terms.join(" ")));
    }
    out.push_str(&format!("inherited: {}\n", if inherited.is_empty() { "none".into() } else { inherited.join(", ") }));
    out
}
