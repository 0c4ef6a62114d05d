//! Loading the fixture corpus and any files ingested under the state directory.
//!
//! Ingested files live in `<state_dir>/ingested/<collection>.jsonl` and are
//! layered over the fixtures at startup; document collections upsert on their
//! key fields, so a re-ingested row replaces the fixture row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use huddle_core::catalog::{CatalogError, CatalogRecord};
use huddle_core::interpreter::{Grammar, Lexicon};
use huddle_core::store::{Document, StoreError, DEFAULT_COLLECTIONS};
use huddle_core::tracking::{Trace, TrackingError, TrackingStore};
use huddle_core::vector::{Chunk, Embedder, VectorError, VectorIndex};
use huddle_core::{Catalog, DocumentStore};
use serde::de::DeserializeOwned;
use thiserror::Error;

pub const TRACES: &str = "traces";
pub const CHUNKS: &str = "chunks";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("{collection}: {source}")]
    Store { collection: String, source: StoreError },
    #[error("{path}:{line}: {source}")]
    Tracking { path: PathBuf, line: usize, source: TrackingError },
    #[error("chunk index: {0}")]
    Vector(#[from] VectorError),
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io { path: path.into(), source }
}

/// Parses one JSON value per non-blank line, keeping 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FixtureError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    parse_jsonl(path, &text)
}

fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(usize, T)>, FixtureError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| FixtureError::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FixtureError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| FixtureError::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Collections the `ingest` command accepts.
pub fn ingestible() -> Vec<&'static str> {
    DEFAULT_COLLECTIONS.iter().map(|(name, _)| *name).chain([TRACES, CHUNKS]).collect()
}

/// Everything the engine reads, immutable once built.
pub struct World {
    pub catalog: Catalog,
    pub lexicon: Lexicon,
    pub grammar: Grammar,
    pub documents: DocumentStore,
    pub tracking: TrackingStore,
    pub vectors: VectorIndex,
    pub embedder: Embedder,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("entities", &self.catalog.entities().len())
            .field("traces", &self.tracking.len())
            .field("chunks", &self.vectors.len())
            .finish_non_exhaustive()
    }
}

fn ingested_path(state_dir: &Path, collection: &str) -> PathBuf {
    state_dir.join("ingested").join(format!("{collection}.jsonl"))
}

/// Files for one collection: the fixture file, then the ingested layer if present.
fn layers(fixtures: &Path, state_dir: Option<&Path>, collection: &str) -> Vec<PathBuf> {
    let mut out = vec![fixtures.join(format!("{collection}.jsonl"))];
    if let Some(dir) = state_dir {
        let p = ingested_path(dir, collection);
        if p.exists() {
            out.push(p);
        }
    }
    out
}

impl World {
    /// Loads the fixture corpus, plus the ingested layer when `state_dir` is given.
    pub fn load(fixtures: &Path, state_dir: Option<&Path>) -> Result<World, FixtureError> {
        let catalog_path = fixtures.join("catalog.jsonl");
        let records = read_jsonl::<CatalogRecord>(&catalog_path)?.into_iter().map(|(_, r)| r);
        let catalog = Catalog::from_records(records)?;
        let lexicon = read_json(&fixtures.join("lexicon.json"))?;
        let grammar = read_json(&fixtures.join("grammar.json"))?;

        let mut documents = DocumentStore::with_default_collections();
        for (name, _) in DEFAULT_COLLECTIONS {
            for path in layers(fixtures, state_dir, name) {
                let docs: Vec<Document> = read_jsonl(&path)?.into_iter().map(|(_, d)| d).collect();
                documents
                    .ingest(name, docs)
                    .map_err(|source| FixtureError::Store { collection: name.to_string(), source })?;
            }
        }

        let mut tracking = TrackingStore::default();
        for path in layers(fixtures, state_dir, TRACES) {
            for (line, trace) in read_jsonl::<Trace>(&path)? {
                tracking.insert(trace).map_err(|source| FixtureError::Tracking { path: path.clone(), line, source })?;
            }
        }

        let mut chunks: Vec<Chunk> = Vec::new();
        for path in layers(fixtures, state_dir, CHUNKS) {
            for (_, chunk) in read_jsonl::<Chunk>(&path)? {
                match chunks.iter_mut().find(|c| c.chunk_id == chunk.chunk_id) {
                    Some(existing) => *existing = chunk,
                    None => chunks.push(chunk),
                }
            }
        }
        let embedder = Embedder::from_chunks(&chunks)?;
        let mut vectors = VectorIndex::new();
        for chunk in chunks {
            vectors.add(chunk, &embedder)?;
        }

        Ok(World { catalog, lexicon, grammar, documents, tracking, vectors, embedder })
    }
}

/// Validates `file` as records of `collection` and appends it to the ingested
/// layer. Returns the number of records accepted.
pub fn ingest_file(fixtures: &Path, state_dir: &Path, collection: &str, file: &Path) -> Result<usize, FixtureError> {
    if !ingestible().contains(&collection) {
        return Err(FixtureError::UnknownCollection(collection.to_string()));
    }
    let text = fs::read_to_string(file).map_err(io(file))?;
    let count = match collection {
        TRACES => {
            let mut scratch = TrackingStore::default();
            let traces = parse_jsonl::<Trace>(file, &text)?;
            for (line, t) in &traces {
                scratch.insert(t.clone()).map_err(|source| FixtureError::Tracking {
                    path: file.into(),
                    line: *line,
                    source,
                })?;
            }
            traces.len()
        }
        CHUNKS => parse_jsonl::<Chunk>(file, &text)?.len(),
        name => {
            let docs: Vec<Document> = parse_jsonl(file, &text)?.into_iter().map(|(_, d)| d).collect();
            let n = docs.len();
            let mut scratch = DocumentStore::with_default_collections();
            scratch
                .ingest(name, docs)
                .map_err(|source| FixtureError::Store { collection: name.to_string(), source })?;
            n
        }
    };
    let target = ingested_path(state_dir, collection);
    let dir = target.parent().expect("ingested path has a parent");
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut out = fs::OpenOptions::new().create(true).append(true).open(&target).map_err(io(&target))?;
    let mut body = text.trim_end().to_string();
    body.push('\n');
    out.write_all(body.as_bytes()).map_err(io(&target))?;
    // the combined corpus must still load
    World::load(fixtures, Some(state_dir))?;
    Ok(count)
}
