//! Registry of players, teams, stat keys and metric definitions.
//!
//! The catalog is built once from a record stream and is immutable afterwards.
//! Free-text mentions resolve against normalized aliases: an exact alias hit
//! scores 1.0, otherwise the score is the token overlap between the mention and
//! the best alias, normalized by the longer of the two.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize, tokenize};
use crate::value::Scalar;

/// Minimum partial-match score for a candidate to count as a match.
pub const MATCH_THRESHOLD: f64 = 0.5;
const PARTIAL_CEILING: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Player,
    Team,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affiliation {
    pub team_id: String,
    pub season_start: u16,
    pub season_end: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub kind: EntityKind,
    pub canonical_name: String,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abbreviation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affiliations: Vec<Affiliation>,
}

impl EntityRecord {
    /// Team the player belonged to during `season`.
    pub fn team_in(&self, season: u16) -> Option<&str> {
        self.affiliations
            .iter()
            .rev()
            .find(|a| a.season_start <= season && season <= a.season_end)
            .map(|a| a.team_id.as_str())
    }

    pub fn affiliation_with(&self, team_id: &str) -> Option<&Affiliation> {
        self.affiliations.iter().rev().find(|a| a.team_id == team_id)
    }

    /// Surname for players, nickname for teams ("Mahomes", "Ravens").
    pub fn short_name(&self) -> &str {
        self.canonical_name.rsplit(' ').next().unwrap_or(&self.canonical_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
    Count,
    Max,
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatKey {
    pub key: String,
    pub display_name: String,
    pub unit: String,
    pub aggregation: Aggregation,
    /// Collection that holds the stat as a document field.
    pub collection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player_field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team_field: Option<String>,
    /// Document field holding the raw value, when it differs from `key`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_field: Option<String>,
}

impl StatKey {
    pub fn source_field(&self) -> &str {
        self.source_field.as_deref().unwrap_or(&self.key)
    }

    pub fn entity_field(&self, kind: EntityKind) -> Option<&str> {
        match kind {
            EntityKind::Player => self.player_field.as_deref(),
            EntityKind::Team => self.team_field.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDirection {
    LowerRankIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    PlayerPositionGroup,
    Team,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDef {
    pub key: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_name: Option<String>,
    pub rank_direction: RankDirection,
    pub population: Population,
}

/// An equality restriction carried by a scope, e.g. `opponent_conference = AFC`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMatch {
    pub field: String,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub season: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub through_week: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub game_filter: Vec<FieldMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("week {0} is outside 1..=22")]
pub struct InvalidWeek(pub u8);

impl Scope {
    pub fn season(season: u16) -> Self {
        Scope { season, through_week: None, game_filter: Vec::new() }
    }

    pub fn through(season: u16, week: u8) -> Result<Self, InvalidWeek> {
        if !(1..=22).contains(&week) {
            return Err(InvalidWeek(week));
        }
        Ok(Scope { season, through_week: Some(week), game_filter: Vec::new() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum CatalogRecord {
    Entity(EntityRecord),
    StatKey(StatKey),
    MetricDef(MetricDef),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("duplicate entity_id {0}")]
    DuplicateEntity(String),
    #[error("duplicate stat key {0}")]
    DuplicateStat(String),
    #[error("duplicate metric key {0}")]
    DuplicateMetric(String),
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("mention is empty")]
    InvalidMention,
    #[error("no entity matches {mention:?}")]
    NoMatch { mention: String, nearest: Vec<(String, f64)> },
}

/// A resolved candidate and its score in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMatch<'a> {
    pub entity: &'a EntityRecord,
    pub score: f64,
}

/// An alias found verbatim inside a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub entity_ids: Vec<String>,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entities: Vec<EntityRecord>,
    by_id: BTreeMap<String, usize>,
    by_alias: BTreeMap<String, Vec<usize>>,
    alias_tokens: Vec<(Vec<String>, usize)>,
    stats: BTreeMap<String, StatKey>,
    metrics: BTreeMap<String, MetricDef>,
    longest_alias: usize,
}

impl Catalog {
    pub fn from_records<I>(records: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = CatalogRecord>,
    {
        let mut catalog = Catalog::default();
        for record in records {
            match record {
                CatalogRecord::Entity(e) => catalog.add_entity(e)?,
                CatalogRecord::StatKey(s) => {
                    if catalog.stats.contains_key(&s.key) || catalog.metrics.contains_key(&s.key) {
                        return Err(CatalogError::DuplicateStat(s.key));
                    }
                    catalog.stats.insert(s.key.clone(), s);
                }
                CatalogRecord::MetricDef(m) => {
                    if catalog.metrics.contains_key(&m.key) || catalog.stats.contains_key(&m.key) {
                        return Err(CatalogError::DuplicateMetric(m.key));
                    }
                    catalog.metrics.insert(m.key.clone(), m);
                }
            }
        }
        Ok(catalog)
    }

    fn add_entity(&mut self, mut entity: EntityRecord) -> Result<(), CatalogError> {
        if self.by_id.contains_key(&entity.entity_id) {
            return Err(CatalogError::DuplicateEntity(entity.entity_id));
        }
        let invalid =
            |reason: &str| CatalogError::InvalidRecord { id: entity.entity_id.clone(), reason: reason.to_string() };
        if entity.canonical_name.trim().is_empty() {
            return Err(invalid("canonical_name is empty"));
        }
        if entity.affiliations.iter().any(|a| a.season_start > a.season_end) {
            return Err(invalid("affiliation season_start is after season_end"));
        }
        let mut aliases: BTreeSet<String> =
            entity.aliases.iter().map(|a| normalize(a)).filter(|a| !a.is_empty()).collect();
        aliases.insert(normalize(&entity.canonical_name));
        entity.aliases = aliases;

        let idx = self.entities.len();
        for alias in &entity.aliases {
            let toks = tokenize(alias);
            self.longest_alias = self.longest_alias.max(toks.len());
            self.alias_tokens.push((toks, idx));
            self.by_alias.entry(alias.clone()).or_default().push(idx);
        }
        self.by_id.insert(entity.entity_id.clone(), idx);
        self.entities.push(entity);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.stats.is_empty() && self.metrics.is_empty()
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn stat(&self, key: &str) -> Option<&StatKey> {
        self.stats.get(key)
    }

    pub fn metric(&self, key: &str) -> Option<&MetricDef> {
        self.metrics.get(key)
    }

    pub fn stats(&self) -> impl Iterator<Item = &StatKey> {
        self.stats.values()
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricDef> {
        self.metrics.values()
    }

    /// True when `key` names a stat or a metric.
    pub fn knows_key(&self, key: &str) -> bool {
        self.stats.contains_key(key) || self.metrics.contains_key(key)
    }

    /// Ranked candidates for a free-text mention.
    pub fn resolve_entity(
        &self,
        mention: &str,
        kind_hint: Option<EntityKind>,
    ) -> Result<Vec<EntityMatch<'_>>, ResolveError> {
        let query = tokenize(mention);
        if query.is_empty() {
            return Err(ResolveError::InvalidMention);
        }
        let normalized = query.join(" ");
        let query_set: BTreeSet<&str> = query.iter().map(String::as_str).collect();

        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        if let Some(hits) = self.by_alias.get(&normalized) {
            for &i in hits {
                best.insert(i, 1.0);
            }
        }
        for (alias, idx) in &self.alias_tokens {
            if best.get(idx) == Some(&1.0) {
                continue;
            }
            let alias_set: BTreeSet<&str> = alias.iter().map(String::as_str).collect();
            let shared = query_set.intersection(&alias_set).count();
            if shared == 0 {
                continue;
            }
            let denom = query_set.len().max(alias_set.len());
            let score = (shared as f64 / denom as f64).min(PARTIAL_CEILING);
            let slot = best.entry(*idx).or_insert(0.0);
            if score > *slot {
                *slot = score;
            }
        }

        let mut ranked: Vec<EntityMatch<'_>> = best
            .into_iter()
            .map(|(i, score)| EntityMatch { entity: &self.entities[i], score })
            .filter(|m| kind_hint.is_none_or(|k| m.entity.kind == k))
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entity.canonical_name.cmp(&b.entity.canonical_name))
                .then_with(|| a.entity.entity_id.cmp(&b.entity.entity_id))
        });

        let (matched, below): (Vec<_>, Vec<_>) = ranked.into_iter().partition(|m| m.score >= MATCH_THRESHOLD);
        if matched.is_empty() {
            return Err(ResolveError::NoMatch {
                mention: normalized,
                nearest: below.iter().take(3).map(|m| (m.entity.canonical_name.clone(), m.score)).collect(),
            });
        }
        Ok(matched)
    }

    /// Finds exact alias occurrences in `tokens`, longest span first, without
    /// overlaps. Results are in token order.
    pub fn spot_mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let mut taken = alloc::vec![false; tokens.len()];
        let mut found = Vec::new();
        for len in (1..=self.longest_alias.min(tokens.len())).rev() {
            for start in 0..=tokens.len() - len {
                if taken[start..start + len].iter().any(|t| *t) {
                    continue;
                }
                let key = tokens[start..start + len].join(" ");
                if let Some(hits) = self.by_alias.get(&key) {
                    let mut ids: Vec<String> = hits.iter().map(|&i| self.entities[i].entity_id.clone()).collect();
                    ids.sort();
                    ids.dedup();
                    taken[start..start + len].iter_mut().for_each(|t| *t = true);
                    found.push(Mention { entity_ids: ids, start, len });
                }
            }
        }
        found.sort_by_key(|m| m.start);
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn player(id: &str, name: &str, aliases: &[&str]) -> CatalogRecord {
        CatalogRecord::Entity(EntityRecord {
            entity_id: id.into(),
            kind: EntityKind::Player,
            canonical_name: name.into(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
            position: Some("QB".into()),
            abbreviation: None,
            affiliations: vec![],
        })
    }

    fn team(id: &str, name: &str, aliases: &[&str]) -> CatalogRecord {
        CatalogRecord::Entity(EntityRecord {
            entity_id: id.into(),
            kind: EntityKind::Team,
            canonical_name: name.into(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
            position: None,
            abbreviation: None,
            affiliations: vec![],
        })
    }

    fn sample() -> Catalog {
        Catalog::from_records(vec![
            player("p_mahomes", "Patrick Mahomes", &["mahomes", "Pat Mahomes"]),
            player("p_purdy", "Brock Purdy", &["purdy"]),
            player("p_twilliams", "Trent Williams", &["T. Williams"]),
            player("p_qwilliams", "Quinnen Williams", &[]),
            team("t_bal", "Baltimore Ravens", &["ravens", "baltimore"]),
        ])
        .unwrap()
    }

    #[test]
    fn empty_catalog_never_resolves() {
        let c = Catalog::from_records(vec![]).unwrap();
        assert!(c.is_empty());
        assert!(matches!(c.resolve_entity("mahomes", None), Err(ResolveError::NoMatch { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Catalog::from_records(vec![player("p1", "A B", &[]), player("p1", "C D", &[])]).unwrap_err();
        assert_eq!(err, CatalogError::DuplicateEntity("p1".into()));
    }

    #[test]
    fn exact_alias_scores_one() {
        let c = sample();
        let hits = c.resolve_entity("mahomes", None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entity.entity_id, "p_mahomes");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn blank_mention_is_invalid() {
        assert_eq!(sample().resolve_entity("  ", None).unwrap_err(), ResolveError::InvalidMention);
        assert_eq!(sample().resolve_entity("", None).unwrap_err(), ResolveError::InvalidMention);
    }

    #[test]
    fn williams_collision_orders_alphabetically() {
        let c = sample();
        // brute force: every alias containing the token "williams"
        let mut expected: Vec<&str> = c
            .entities()
            .iter()
            .filter(|e| e.aliases.iter().any(|a| a.split(' ').any(|t| t == "williams")))
            .map(|e| e.canonical_name.as_str())
            .collect();
        expected.sort();
        let hits = c.resolve_entity("williams", None).unwrap();
        let names: Vec<&str> = hits.iter().map(|m| m.entity.canonical_name.as_str()).collect();
        assert_eq!(names, expected);
        assert_eq!(names, ["Quinnen Williams", "Trent Williams"]);
        assert!(hits.iter().all(|m| m.score > 0.0 && m.score < 1.0));
    }

    #[test]
    fn kind_hint_filters() {
        let c = sample();
        assert!(c.resolve_entity("ravens", Some(EntityKind::Player)).is_err());
        assert_eq!(c.resolve_entity("ravens", Some(EntityKind::Team)).unwrap()[0].entity.entity_id, "t_bal");
    }

    #[test]
    fn no_match_lists_nearest() {
        let c = sample();
        match c.resolve_entity("patrick zzz yyy", None) {
            Err(ResolveError::NoMatch { nearest, .. }) => assert_eq!(nearest[0].0, "Patrick Mahomes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spots_longest_mentions() {
        let c = sample();
        let toks = tokenize("Is Patrick Mahomes better than the Baltimore Ravens or purdy");
        let m = c.spot_mentions(&toks);
        let ids: Vec<&str> = m.iter().map(|m| m.entity_ids[0].as_str()).collect();
        assert_eq!(ids, ["p_mahomes", "t_bal", "p_purdy"]);
        assert_eq!(m[0].len, 2);
    }

    proptest! {
        #[test]
        fn canonical_name_resolves_first(idx in 0usize..5) {
            let c = sample();
            let e = &c.entities()[idx];
            let hits = c.resolve_entity(&e.canonical_name, None).unwrap();
            prop_assert_eq!(&hits[0].entity.entity_id, &e.entity_id);
            prop_assert_eq!(hits[0].score, 1.0);
        }

        #[test]
        fn resolution_is_case_insensitive(s in "[A-Za-z ]{1,24}") {
            let c = sample();
            let a = c.resolve_entity(&s, None).map(|v| v.iter().map(|m| (m.entity.entity_id.clone(), m.score)).collect::<Vec<_>>());
            let b = c.resolve_entity(&s.to_lowercase(), None).map(|v| v.iter().map(|m| (m.entity.entity_id.clone(), m.score)).collect::<Vec<_>>());
            prop_assert_eq!(a, b);
        }
    }
}
