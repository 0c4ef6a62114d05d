//! In-memory document store with filter / group / aggregate / sort / limit.
//!
//! Collections declare their key fields up front; ingesting a document whose
//! key matches an existing one replaces it in place. Query execution follows
//! plain relational order: filter, then group and aggregate, then a stable
//! sort, then limit. A field absent from a document never satisfies any filter
//! operator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Aggregation, Scope};
use crate::value::Scalar;

pub const PLAYER_SEASON_STATS: &str = "player_season_stats";
pub const GAME_LOGS: &str = "game_logs";
pub const METRIC_RANKS: &str = "metric_ranks";
pub const CAP_TABLE: &str = "cap_table";
pub const PLAYS: &str = "plays";

/// Collections the engine ships with and their key fields.
pub const DEFAULT_COLLECTIONS: &[(&str, &[&str])] = &[
    (PLAYER_SEASON_STATS, &["player_id", "season", "week"]),
    (GAME_LOGS, &["player_id", "season", "week"]),
    (METRIC_RANKS, &["entity_id", "metric", "season", "week"]),
    (CAP_TABLE, &["player_id", "year"]),
    (PLAYS, &["play_id"]),
];

pub type Document = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Set(Vec<Scalar>),
    Value(Scalar),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterClause {
    pub field: String,
    pub op: FilterOp,
    pub value: Operand,
}

impl FilterClause {
    pub fn eq(field: &str, value: impl Into<Scalar>) -> Self {
        FilterClause { field: field.to_string(), op: FilterOp::Eq, value: Operand::Value(value.into()) }
    }

    pub fn cmp(field: &str, op: FilterOp, value: impl Into<Scalar>) -> Self {
        FilterClause { field: field.to_string(), op, value: Operand::Value(value.into()) }
    }

    pub fn one_of(field: &str, values: Vec<Scalar>) -> Self {
        FilterClause { field: field.to_string(), op: FilterOp::In, value: Operand::Set(values) }
    }

    pub fn matches(&self, doc: &Document) -> bool {
        let Some(actual) = doc.get(&self.field).filter(|v| !v.is_null()) else {
            return false;
        };
        let equal = |v: &Scalar| actual.partial_compare(v) == Some(Ordering::Equal);
        match (&self.op, &self.value) {
            (FilterOp::In, Operand::Set(values)) => values.iter().any(equal),
            (FilterOp::In, Operand::Value(v)) => equal(v),
            (_, Operand::Set(_)) => false,
            (op, Operand::Value(v)) => match actual.partial_compare(v) {
                None => false,
                Some(ord) => match op {
                    FilterOp::Eq => ord == Ordering::Equal,
                    FilterOp::Ne => ord != Ordering::Equal,
                    FilterOp::Lt => ord == Ordering::Less,
                    FilterOp::Le => ord != Ordering::Greater,
                    FilterOp::Gt => ord == Ordering::Greater,
                    FilterOp::Ge => ord != Ordering::Less,
                    FilterOp::In => unreachable!(),
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub func: Aggregation,
    pub field: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortSpec {
    pub key: String,
    #[serde(default)]
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub collection: String,
    #[serde(default)]
    pub filter: Vec<FilterClause>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aggregates: Vec<AggregateSpec>,
    /// Columns to project when no aggregates are requested; all fields otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sort: Option<SortSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl StructuredQuery {
    pub fn on(collection: &str) -> Self {
        StructuredQuery {
            collection: collection.to_string(),
            filter: Vec::new(),
            group_by: Vec::new(),
            aggregates: Vec::new(),
            select: None,
            sort: None,
            limit: None,
        }
    }

    fn referenced_fields(&self) -> impl Iterator<Item = &str> {
        self.filter
            .iter()
            .map(|c| c.field.as_str())
            .chain(self.group_by.iter().map(String::as_str))
            .chain(self.aggregates.iter().map(|a| a.field.as_str()))
            .chain(self.select.iter().flatten().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub collection: String,
    pub filter: Vec<FilterClause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Scalar>>,
    pub provenance: Provenance,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Scalar> {
        self.rows.get(row)?.get(self.column(column)?)
    }
}

/// Stored rank of an entity on a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub entity_id: String,
    pub metric: String,
    pub season: u16,
    pub week: u8,
    pub rank: u32,
    pub population: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown collection {0}")]
    UnknownCollection(String),
    #[error("unknown field {field} in {collection}")]
    UnknownField { collection: String, field: String },
    #[error("record {index} in {collection} lacks key field {field}")]
    MissingKeyField { collection: String, index: usize, field: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{entity} is not ranked on {metric} in season {season}")]
    NotRanked { entity: String, metric: String, season: u16 },
}

#[derive(Debug, Clone, Default)]
pub struct Collection {
    key_fields: Vec<String>,
    docs: Vec<Document>,
    by_key: BTreeMap<String, usize>,
    fields: BTreeSet<String>,
}

impl Collection {
    pub fn new(key_fields: &[&str]) -> Self {
        Collection { key_fields: key_fields.iter().map(|f| f.to_string()).collect(), ..Default::default() }
    }

    pub fn key_fields(&self) -> &[String] {
        &self.key_fields
    }

    /// Documents in ingestion order.
    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn key_of(&self, doc: &Document) -> String {
        let mut key = String::new();
        for f in &self.key_fields {
            key.push_str(&doc.get(f).map(Scalar::key_string).unwrap_or_default());
            key.push('\u{1f}');
        }
        key
    }
}

#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    collections: BTreeMap<String, Collection>,
    strict: bool,
}

impl DocumentStore {
    /// Store with the five shipped collections registered and empty.
    pub fn with_default_collections() -> Self {
        let mut store = DocumentStore::default();
        for (name, keys) in DEFAULT_COLLECTIONS {
            store.register(name, keys);
        }
        store
    }

    /// Reject queries that reference fields no document in the collection carries.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn register(&mut self, name: &str, key_fields: &[&str]) {
        self.collections.entry(name.to_string()).or_insert_with(|| Collection::new(key_fields));
    }

    pub fn collection(&self, name: &str) -> Option<&Collection> {
        self.collections.get(name)
    }

    pub fn collection_names(&self) -> impl Iterator<Item = &str> {
        self.collections.keys().map(String::as_str)
    }

    /// Validates every document first and applies them only if all pass, so a
    /// rejected batch leaves the collection untouched.
    pub fn ingest(&mut self, collection: &str, docs: Vec<Document>) -> Result<usize, StoreError> {
        let coll = self
            .collections
            .get_mut(collection)
            .ok_or_else(|| StoreError::UnknownCollection(collection.to_string()))?;
        for (index, doc) in docs.iter().enumerate() {
            if let Some(field) = coll.key_fields.iter().find(|f| doc.get(*f).is_none_or(Scalar::is_null)) {
                return Err(StoreError::MissingKeyField {
                    collection: collection.to_string(),
                    index,
                    field: field.clone(),
                });
            }
        }
        let count = docs.len();
        for doc in docs {
            coll.fields.extend(doc.keys().cloned());
            let key = coll.key_of(&doc);
            match coll.by_key.get(&key) {
                Some(&i) => coll.docs[i] = doc,
                None => {
                    coll.by_key.insert(key, coll.docs.len());
                    coll.docs.push(doc);
                }
            }
        }
        Ok(count)
    }

    pub fn execute(&self, query: &StructuredQuery) -> Result<ResultTable, StoreError> {
        let coll = self
            .collections
            .get(&query.collection)
            .ok_or_else(|| StoreError::UnknownCollection(query.collection.clone()))?;
        if !query.group_by.is_empty() && query.aggregates.is_empty() {
            return Err(StoreError::InvalidQuery("group_by requires at least one aggregate".into()));
        }
        if query.limit == Some(0) {
            return Err(StoreError::InvalidQuery("limit must be positive".into()));
        }
        if self.strict {
            if let Some(field) = query.referenced_fields().find(|f| !coll.fields.contains(*f)) {
                return Err(StoreError::UnknownField {
                    collection: query.collection.clone(),
                    field: field.to_string(),
                });
            }
        }

        let matched: Vec<&Document> = coll.docs.iter().filter(|d| query.filter.iter().all(|c| c.matches(d))).collect();

        let (columns, mut rows) = if query.aggregates.is_empty() {
            project(&matched, query.select.as_deref(), &coll.fields)
        } else {
            aggregate(&matched, &query.group_by, &query.aggregates)
        };

        if let Some(sort) = &query.sort {
            let idx = columns
                .iter()
                .position(|c| *c == sort.key)
                .ok_or_else(|| StoreError::InvalidQuery(alloc::format!("sort key {} is not a column", sort.key)))?;
            rows.sort_by(|a, b| {
                let ord = a[idx].total_cmp(&b[idx]);
                if sort.descending {
                    ord.reverse()
                } else {
                    ord
                }
            });
        }
        if let Some(limit) = query.limit {
            rows.truncate(limit);
        }
        Ok(ResultTable {
            columns,
            rows,
            provenance: Provenance { collection: query.collection.clone(), filter: query.filter.clone() },
        })
    }

    /// Stored rank for `entity_id` on `metric` in `scope`: the latest week at or
    /// before `scope.through_week`, or the latest week of the season when the
    /// scope is a whole season.
    pub fn rank_lookup(&self, metric: &str, entity_id: &str, scope: &Scope) -> Result<RankResult, StoreError> {
        let not_ranked = || StoreError::NotRanked {
            entity: entity_id.to_string(),
            metric: metric.to_string(),
            season: scope.season,
        };
        let coll = self
            .collections
            .get(METRIC_RANKS)
            .ok_or_else(|| StoreError::UnknownCollection(METRIC_RANKS.to_string()))?;
        let season = Scalar::Int(i64::from(scope.season));
        let mut best: Option<(i64, &Document)> = None;
        for doc in &coll.docs {
            let same = |f: &str, v: &Scalar| doc.get(f).and_then(|x| x.partial_compare(v)) == Some(Ordering::Equal);
            if !same("entity_id", &Scalar::from(entity_id))
                || !same("metric", &Scalar::from(metric))
                || !same("season", &season)
            {
                continue;
            }
            let Some(week) = doc.get("week").and_then(Scalar::as_i64) else { continue };
            if scope.through_week.is_some_and(|w| week > i64::from(w)) {
                continue;
            }
            if best.is_none_or(|(w, _)| week > w) {
                best = Some((week, doc));
            }
        }
        let (week, doc) = best.ok_or_else(not_ranked)?;
        let int = |f: &str| doc.get(f).and_then(Scalar::as_i64).and_then(|v| u32::try_from(v).ok());
        let rank = int("rank").filter(|r| *r >= 1).ok_or_else(not_ranked)?;
        let population = int("population").ok_or_else(not_ranked)?;
        Ok(RankResult {
            entity_id: entity_id.to_string(),
            metric: metric.to_string(),
            season: scope.season,
            week: u8::try_from(week).unwrap_or(u8::MAX),
            rank,
            population,
            value: doc.get("value").and_then(Scalar::as_f64),
        })
    }
}

/// Without a selection every field of the collection becomes a column, so the
/// shape of the result does not depend on which documents matched.
fn project(
    matched: &[&Document],
    select: Option<&[String]>,
    fields: &BTreeSet<String>,
) -> (Vec<String>, Vec<Vec<Scalar>>) {
    let columns: Vec<String> = match select {
        Some(cols) => cols.to_vec(),
        None => fields.iter().cloned().collect(),
    };
    let rows =
        matched.iter().map(|d| columns.iter().map(|c| d.get(c).cloned().unwrap_or(Scalar::Null)).collect()).collect();
    (columns, rows)
}

fn aggregate(
    matched: &[&Document],
    group_by: &[String],
    aggregates: &[AggregateSpec],
) -> (Vec<String>, Vec<Vec<Scalar>>) {
    let mut columns: Vec<String> = group_by.to_vec();
    columns.extend(aggregates.iter().map(|a| a.alias.clone()));

    // groups keep first-appearance order
    let mut order: Vec<(Vec<Scalar>, Vec<&Document>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    if group_by.is_empty() {
        order.push((Vec::new(), matched.to_vec()));
    } else {
        for doc in matched {
            let values: Vec<Scalar> = group_by.iter().map(|g| doc.get(g).cloned().unwrap_or(Scalar::Null)).collect();
            let key: String = values.iter().map(|v| v.key_string() + "\u{1f}").collect();
            let slot = *index.entry(key).or_insert_with(|| {
                order.push((values, Vec::new()));
                order.len() - 1
            });
            order[slot].1.push(doc);
        }
    }

    let rows = order
        .into_iter()
        .map(|(mut values, docs)| {
            values.extend(aggregates.iter().map(|a| apply(a.func, &a.field, &docs)));
            values
        })
        .collect();
    (columns, rows)
}

fn apply(func: Aggregation, field: &str, docs: &[&Document]) -> Scalar {
    let mut present = docs.iter().filter_map(|d| d.get(field)).filter(|v| !v.is_null());
    match func {
        Aggregation::Count => Scalar::Int(present.count() as i64),
        Aggregation::Sum => {
            let mut total = 0.0f64;
            let mut all_int = true;
            for v in present {
                if let Some(x) = v.as_f64() {
                    all_int &= matches!(v, Scalar::Int(_));
                    total += x;
                }
            }
            if all_int {
                Scalar::Int(total as i64)
            } else {
                Scalar::Float(total)
            }
        }
        Aggregation::Mean => {
            let nums: Vec<f64> = present.filter_map(Scalar::as_f64).collect();
            if nums.is_empty() {
                Scalar::Null
            } else {
                Scalar::Float(nums.iter().sum::<f64>() / nums.len() as f64)
            }
        }
        Aggregation::Max => present
            .fold(None::<&Scalar>, |acc, v| match acc {
                Some(a) if a.total_cmp(v) != Ordering::Less => Some(a),
                _ => Some(v),
            })
            .cloned()
            .unwrap_or(Scalar::Null),
        Aggregation::Last => present.next_back().cloned().unwrap_or(Scalar::Null),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn doc(pairs: &[(&str, Scalar)]) -> Document {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn weekly(player: &str, season: i64, week: i64, yards: i64) -> Document {
        doc(&[
            ("player_id", player.into()),
            ("season", season.into()),
            ("week", week.into()),
            ("pass_yards", yards.into()),
        ])
    }

    fn store() -> DocumentStore {
        let mut s = DocumentStore::with_default_collections();
        s.ingest(
            PLAYER_SEASON_STATS,
            vec![
                weekly("p_a", 2024, 1, 100),
                weekly("p_a", 2024, 2, 150),
                weekly("p_a", 2024, 3, 200),
                weekly("p_b", 2024, 1, 90),
                weekly("p_b", 2023, 1, 300),
            ],
        )
        .unwrap();
        s
    }

    #[test]
    fn filter_group_sum() {
        let s = store();
        let mut q = StructuredQuery::on(PLAYER_SEASON_STATS);
        q.filter = vec![FilterClause::eq("season", 2024i64), FilterClause::cmp("week", FilterOp::Le, 2i64)];
        q.group_by = vec!["player_id".into()];
        q.aggregates =
            vec![AggregateSpec { func: Aggregation::Sum, field: "pass_yards".into(), alias: "yards".into() }];
        q.sort = Some(SortSpec { key: "yards".into(), descending: true });
        let t = s.execute(&q).unwrap();
        assert_eq!(t.columns, ["player_id", "yards"]);
        assert_eq!(
            t.rows,
            vec![vec![Scalar::from("p_a"), Scalar::Int(250)], vec![Scalar::from("p_b"), Scalar::Int(90)]]
        );
    }

    #[test]
    fn upsert_replaces_by_key() {
        let mut s = store();
        s.ingest(PLAYER_SEASON_STATS, vec![weekly("p_a", 2024, 1, 111)]).unwrap();
        let c = s.collection(PLAYER_SEASON_STATS).unwrap();
        assert_eq!(c.documents().len(), 5);
        assert_eq!(c.documents()[0]["pass_yards"], Scalar::Int(111));
    }

    #[test]
    fn missing_key_rejects_whole_batch() {
        let mut s = store();
        let bad = doc(&[("season", 2024i64.into()), ("week", 4i64.into())]);
        let err = s.ingest(PLAYER_SEASON_STATS, vec![weekly("p_c", 2024, 1, 1), bad]).unwrap_err();
        assert_eq!(
            err,
            StoreError::MissingKeyField { collection: PLAYER_SEASON_STATS.into(), index: 1, field: "player_id".into() }
        );
        assert_eq!(s.collection(PLAYER_SEASON_STATS).unwrap().documents().len(), 5);
    }

    #[test]
    fn empty_collection_yields_empty_table() {
        let s = DocumentStore::with_default_collections();
        let t = s.execute(&StructuredQuery::on(PLAYS)).unwrap();
        assert!(t.rows.is_empty());
    }

    #[test]
    fn unknown_collection_and_strict_fields() {
        let mut s = store();
        assert_eq!(s.execute(&StructuredQuery::on("nope")).unwrap_err(), StoreError::UnknownCollection("nope".into()));
        let mut q = StructuredQuery::on(PLAYER_SEASON_STATS);
        q.filter = vec![FilterClause::eq("bogus", 1i64)];
        assert!(s.execute(&q).unwrap().rows.is_empty());
        s.set_strict(true);
        assert!(matches!(s.execute(&q), Err(StoreError::UnknownField { .. })));
    }

    #[test]
    fn absent_fields_never_match() {
        let s = store();
        for op in [FilterOp::Eq, FilterOp::Ne, FilterOp::Lt, FilterOp::Ge] {
            let mut q = StructuredQuery::on(PLAYER_SEASON_STATS);
            q.filter = vec![FilterClause::cmp("rush_yards", op, 0i64)];
            assert!(s.execute(&q).unwrap().rows.is_empty(), "{op:?}");
        }
    }

    #[test]
    fn aggregate_without_rows_gives_single_row() {
        let s = store();
        let mut q = StructuredQuery::on(PLAYER_SEASON_STATS);
        q.filter = vec![FilterClause::eq("player_id", "nobody")];
        q.aggregates = vec![
            AggregateSpec { func: Aggregation::Sum, field: "pass_yards".into(), alias: "s".into() },
            AggregateSpec { func: Aggregation::Count, field: "pass_yards".into(), alias: "n".into() },
            AggregateSpec { func: Aggregation::Mean, field: "pass_yards".into(), alias: "m".into() },
        ];
        let t = s.execute(&q).unwrap();
        assert_eq!(t.rows, vec![vec![Scalar::Int(0), Scalar::Int(0), Scalar::Null]]);
    }

    #[test]
    fn group_by_without_aggregate_is_invalid() {
        let mut q = StructuredQuery::on(PLAYER_SEASON_STATS);
        q.group_by = vec!["season".into()];
        assert!(matches!(store().execute(&q), Err(StoreError::InvalidQuery(_))));
    }

    #[test]
    fn rank_lookup_picks_latest_week_in_scope() {
        let mut s = DocumentStore::with_default_collections();
        let rank = |week: i64, rank: i64| {
            doc(&[
                ("entity_id", "p_a".into()),
                ("metric", "twar".into()),
                ("season", 2024i64.into()),
                ("week", week.into()),
                ("rank", rank.into()),
                ("population", 48i64.into()),
                ("value", 0.1f64.into()),
            ])
        };
        s.ingest(METRIC_RANKS, vec![rank(9, 41), rank(10, 39), rank(11, 37)]).unwrap();
        let r = s.rank_lookup("twar", "p_a", &Scope::through(2024, 10).unwrap()).unwrap();
        assert_eq!((r.rank, r.population, r.week, r.value), (39, 48, 10, Some(0.1)));
        assert_eq!(s.rank_lookup("twar", "p_a", &Scope::season(2024)).unwrap().rank, 37);
        assert!(matches!(s.rank_lookup("twar", "p_a", &Scope::season(2023)), Err(StoreError::NotRanked { .. })));
    }
}
