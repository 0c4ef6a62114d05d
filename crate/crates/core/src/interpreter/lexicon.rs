//! Synonym lexicon and pattern grammar, both loaded from versioned data files.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::FieldMatch;

use super::{Comparator, IntentKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideMetrics {
    pub offense: Vec<String>,
    pub defense: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterConfig {
    pub metric: String,
    pub positions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deixis {
    /// Phrases meaning the clock's season to date ("this season").
    pub current_season: Vec<String>,
    /// Phrases meaning the season before the clock's ("last season").
    pub previous_season: Vec<String>,
    /// Phrases meaning the clock's current week's game ("last night").
    pub last_game: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: u32,
    /// Stat key -> phrases that name it.
    pub stats: BTreeMap<String, Vec<String>>,
    /// Metric key -> phrases that name it.
    pub metrics: BTreeMap<String, Vec<String>>,
    pub comparators: BTreeMap<String, Comparator>,
    /// Field that conference words filter on, and word -> value.
    pub conference_field: String,
    pub conferences: BTreeMap<String, String>,
    /// Phrase -> equality filter on play or game documents.
    pub play_filters: BTreeMap<String, FieldMatch>,
    /// Words that refer to the configured home team ("our", "we").
    pub first_person: Vec<String>,
    /// Position code -> metrics compared by a verdict. Key `default` is the fallback.
    pub verdict_metrics: BTreeMap<String, Vec<String>>,
    pub weakness_metrics: SideMetrics,
    /// (offense metric, defense metric) pairs compared by a mismatch query.
    pub mismatch_pairs: Vec<(String, String)>,
    pub roster: RosterConfig,
    pub side_words: SideMetrics,
    pub deixis: Deixis,
    /// Phrases that mark a prompt as asking for unstructured background.
    pub context_topics: Vec<String>,
    pub stopwords: BTreeSet<String>,
    /// Last regular-season week, used when a past season is named.
    pub final_week: u8,
}

impl Lexicon {
    /// Every stat or metric phrase with its key, longest phrase first.
    pub fn key_phrases(&self) -> Vec<(Vec<String>, String)> {
        let mut out: Vec<(Vec<String>, String)> = self
            .stats
            .iter()
            .chain(self.metrics.iter())
            .flat_map(|(key, phrases)| phrases.iter().map(move |p| (crate::text::tokenize(p), key.clone())))
            .filter(|(p, _)| !p.is_empty())
            .collect();
        out.sort_by_key(|p| core::cmp::Reverse(p.0.len()));
        out
    }

    pub fn verdict_metrics_for(&self, position: Option<&str>) -> &[String] {
        position
            .and_then(|p| self.verdict_metrics.get(p))
            .or_else(|| self.verdict_metrics.get("default"))
            .map_or(&[], Vec::as_slice)
    }
}

/// Whether a pattern needs a stat or metric phrase in the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatRule {
    #[default]
    Any,
    Required,
    Forbidden,
}

/// The intent a pattern produces: a fixed kind, or the previous turn's intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternIntent {
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
    Previous,
}

impl PatternIntent {
    pub fn kind(self) -> Option<IntentKind> {
        Some(match self {
            PatternIntent::StatLookup => IntentKind::StatLookup,
            PatternIntent::StatComparison => IntentKind::StatComparison,
            PatternIntent::MetricVerdict => IntentKind::MetricVerdict,
            PatternIntent::RecordQuery => IntentKind::RecordQuery,
            PatternIntent::TeamWeakness => IntentKind::TeamWeakness,
            PatternIntent::TeamMismatch => IntentKind::TeamMismatch,
            PatternIntent::RosterBuild => IntentKind::RosterBuild,
            PatternIntent::CapQuery => IntentKind::CapQuery,
            PatternIntent::ContextSearch => IntentKind::ContextSearch,
            PatternIntent::VideoLookup => IntentKind::VideoLookup,
            PatternIntent::Previous => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub id: String,
    pub intent: PatternIntent,
    /// Alternatives; the pattern fires when every phrase of some alternative
    /// occurs in the prompt. Empty means "always".
    #[serde(default)]
    pub any_of: Vec<Vec<String>>,
    #[serde(default)]
    pub none_of: Vec<String>,
    #[serde(default)]
    pub stat: StatRule,
    #[serde(default)]
    pub needs_followup: bool,
    /// Requires a context topic phrase or an entity mention.
    #[serde(default)]
    pub needs_domain_term: bool,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub example: String,
}

/// Ordered patterns; the first that matches wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub version: u32,
    pub patterns: Vec<Pattern>,
}
