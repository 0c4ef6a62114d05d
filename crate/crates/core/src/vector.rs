//! Term-frequency embedder and exact cosine k-NN index over text chunks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Article,
    Transcript,
    Report,
    Social,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub text: String,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub play_ids: Vec<String>,
    /// Seconds into the broadcast, for transcripts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    /// True when no token of the input was in the vocabulary.
    pub degenerate: bool,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.vector, &self.vector))
    }

    /// Unit-length copy; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Embedding> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        Some(Embedding { vector: self.vector.iter().map(|v| v / n).collect(), degenerate: false })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0.0 when either side is the zero vector.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    match (a.normalized(), b.normalized()) {
        (Some(a), Some(b)) => dot(&a.vector, &b.vector),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("embedder corpus is empty")]
    EmptyCorpus,
    #[error("duplicate chunk_id {0}")]
    DuplicateChunk(String),
    #[error("chunk {0} has empty text")]
    EmptyText(String),
    #[error("transcript chunk {0} has no timestamp")]
    MissingTimestamp(String),
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query embedding is the zero vector")]
    DegenerateQuery,
    #[error("k must be positive")]
    ZeroK,
}

/// Vocabulary-indexed term-frequency embedder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedder {
    vocabulary: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Embedder {
    /// Vocabulary is the distinct tokens of the corpus in first-seen order.
    pub fn build<'a, I>(texts: I) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocabulary = Vec::new();
        let mut index = BTreeMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in tokenize(text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), vocabulary.len());
                    vocabulary.push(tok);
                }
            }
        }
        if !any {
            return Err(VectorError::EmptyCorpus);
        }
        Ok(Embedder { vocabulary, index })
    }

    pub fn from_chunks(chunks: &[Chunk]) -> Result<Self, VectorError> {
        Self::build(chunks.iter().map(|c| c.text.as_str()))
    }

    pub fn dimension(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    /// Raw term frequencies; out-of-vocabulary tokens are ignored. Left
    /// unnormalized so the index divides by the norm exactly once.
    pub fn embed(&self, text: &str) -> Embedding {
        let mut v = alloc::vec![0.0; self.vocabulary.len()];
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(&tok) {
                v[i] += 1.0;
            }
        }
        let degenerate = v.iter().all(|x| *x == 0.0);
        Embedding { vector: v, degenerate }
    }
}

/// Metadata predicate. Each non-empty list must be hit by at least one value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFilter {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_kinds: Vec<SourceKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub play_ids: Vec<String>,
}

impl ChunkFilter {
    pub fn is_empty(&self) -> bool {
        self.source_kinds.is_empty() && self.entity_tags.is_empty() && self.play_ids.is_empty()
    }

    pub fn accepts(&self, chunk: &Chunk) -> bool {
        (self.source_kinds.is_empty() || self.source_kinds.contains(&chunk.source_kind))
            && (self.entity_tags.is_empty() || chunk.entity_tags.iter().any(|t| self.entity_tags.contains(t)))
            && (self.play_ids.is_empty() || chunk.play_ids.iter().any(|p| self.play_ids.contains(p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub chunk: &'a Chunk,
    pub similarity: f64,
}

/// Exact index: every search scans all stored unit vectors.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    entries: Vec<(Chunk, Vec<f64>)>,
    ids: BTreeSet<String>,
    dimension: Option<usize>,
    skipped: Vec<String>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Embeds and stores a chunk. Returns `Ok(false)` when the chunk embeds to
    /// the zero vector and was left out.
    pub fn add(&mut self, chunk: Chunk, embedder: &Embedder) -> Result<bool, VectorError> {
        let emb = embedder.embed(&chunk.text);
        self.add_embedded(chunk, &emb)
    }

    pub fn add_embedded(&mut self, chunk: Chunk, embedding: &Embedding) -> Result<bool, VectorError> {
        if self.ids.contains(&chunk.chunk_id) {
            return Err(VectorError::DuplicateChunk(chunk.chunk_id));
        }
        if chunk.text.trim().is_empty() {
            return Err(VectorError::EmptyText(chunk.chunk_id));
        }
        if chunk.source_kind == SourceKind::Transcript && chunk.timestamp.is_none() {
            return Err(VectorError::MissingTimestamp(chunk.chunk_id));
        }
        if let Some(d) = self.dimension {
            if d != embedding.dimension() {
                return Err(VectorError::DimensionMismatch { expected: d, got: embedding.dimension() });
            }
        }
        let Some(unit) = embedding.normalized() else {
            self.skipped.push(chunk.chunk_id);
            return Ok(false);
        };
        self.dimension = Some(embedding.dimension());
        self.ids.insert(chunk.chunk_id.clone());
        self.entries.push((chunk, unit.vector));
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Chunk ids excluded at add time because they embedded to zero.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.entries.iter().map(|(c, _)| c)
    }

    /// Top-`k` chunks by cosine similarity, ties broken by chunk_id ascending.
    pub fn search(
        &self,
        query: &Embedding,
        k: usize,
        filter: Option<&ChunkFilter>,
    ) -> Result<Vec<Hit<'_>>, VectorError> {
        if k == 0 {
            return Err(VectorError::ZeroK);
        }
        let q = query.normalized().ok_or(VectorError::DegenerateQuery)?;
        if let Some(d) = self.dimension {
            if d != q.dimension() {
                return Err(VectorError::DimensionMismatch { expected: d, got: q.dimension() });
            }
        }
        let mut hits: Vec<Hit<'_>> = self
            .entries
            .iter()
            .filter(|(c, _)| filter.is_none_or(|f| f.accepts(c)))
            .map(|(c, v)| Hit { chunk: c, similarity: dot(&q.vector, v) })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity.total_cmp(&a.similarity).then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
        });
        hits.truncate(k);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn chunk(id: &str, text: &str, kind: SourceKind) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            text: text.into(),
            source_kind: kind,
            play_ids: vec![],
            timestamp: (kind == SourceKind::Transcript).then_some(1.0),
            entity_tags: vec![],
        }
    }

    #[test]
    fn embedder_basics() {
        let e = Embedder::build(["cover two defense"]).unwrap();
        assert_eq!(e.dimension(), 3);
        assert_eq!(Embedder::build(core::iter::empty::<&str>()), Err(VectorError::EmptyCorpus));
        let a = e.embed("cover two");
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(a.vector.iter().sum::<f64>(), 2.0, "term counts");
        assert_eq!(cosine(&e.embed("cover"), &e.embed("defense")), 0.0);
        assert!(e.embed("touchdown").degenerate);
    }

    #[test]
    fn same_corpus_same_vocabulary() {
        let texts = ["b a c", "c d"];
        assert_eq!(Embedder::build(texts).unwrap().vocabulary(), Embedder::build(texts).unwrap().vocabulary());
        assert_eq!(Embedder::build(texts).unwrap().vocabulary(), ["b", "a", "c", "d"]);
    }

    #[test]
    fn index_rules() {
        let e = Embedder::build(["alpha beta gamma"]).unwrap();
        let mut idx = VectorIndex::new();
        assert!(idx.add(chunk("c1", "alpha beta", SourceKind::Article), &e).unwrap());
        assert!(!idx.add(chunk("c2", "zzz", SourceKind::Article), &e).unwrap());
        assert_eq!(idx.skipped(), ["c2".to_string()]);
        assert_eq!(
            idx.add(chunk("c1", "gamma", SourceKind::Article), &e),
            Err(VectorError::DuplicateChunk("c1".into()))
        );
        let mut t = chunk("c3", "gamma", SourceKind::Transcript);
        t.timestamp = None;
        assert_eq!(idx.add(t, &e), Err(VectorError::MissingTimestamp("c3".into())));
        assert_eq!(idx.search(&e.embed("nothing"), 3, None), Err(VectorError::DegenerateQuery));
    }

    #[test]
    fn filter_and_ties() {
        let e = Embedder::build(["cover two zone blitz"]).unwrap();
        let mut idx = VectorIndex::new();
        idx.add(chunk("b", "cover two", SourceKind::Transcript), &e).unwrap();
        idx.add(chunk("a", "cover two", SourceKind::Article), &e).unwrap();
        idx.add(chunk("c", "zone blitz", SourceKind::Transcript), &e).unwrap();
        let all = idx.search(&e.embed("cover two"), 10, None).unwrap();
        let ids: Vec<_> = all.iter().map(|h| h.chunk.chunk_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let f = ChunkFilter { source_kinds: vec![SourceKind::Transcript], ..Default::default() };
        let only = idx.search(&e.embed("cover two"), 10, Some(&f)).unwrap();
        assert!(only.iter().all(|h| h.chunk.source_kind == SourceKind::Transcript));
        assert_eq!(only.len(), 2);
    }

    const WORDS: &[&str] = &["cover", "zone", "blitz", "man", "press", "slot", "deep", "run", "pass", "screen"];

    fn corpus() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<usize>)> {
        (
            prop::collection::vec(prop::collection::vec(0..WORDS.len(), 1..6), 1..40),
            prop::collection::vec(0..WORDS.len(), 1..4),
        )
    }

    fn build(docs: &[Vec<usize>]) -> (Embedder, VectorIndex) {
        let texts: Vec<String> =
            docs.iter().map(|d| d.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")).collect();
        let e = Embedder::build(texts.iter().map(String::as_str)).unwrap();
        let mut idx = VectorIndex::new();
        for (i, t) in texts.iter().enumerate() {
            let mut c = chunk(&format!("c{i:03}"), t, SourceKind::Article);
            if i % 2 == 0 {
                c.entity_tags = vec!["even".into()];
            }
            idx.add(c, &e).unwrap();
        }
        (e, idx)
    }

    fn words(q: &[usize]) -> String {
        q.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")
    }

    proptest! {
        #[test]
        fn search_equals_brute_force((docs, q) in corpus(), k in 1usize..50) {
            let (e, idx) = build(&docs);
            let query = e.embed(&words(&q));
            prop_assume!(!query.degenerate);
            let got: Vec<String> = idx.search(&query, k, None).unwrap().iter().map(|h| h.chunk.chunk_id.clone()).collect();
            let mut oracle: Vec<(f64, String)> = idx
                .chunks()
                .map(|c| (cosine(&query, &e.embed(&c.text)), c.chunk_id.clone()))
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            let want: Vec<String> = oracle.into_iter().take(k).map(|(_, id)| id).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn ranking_survives_power_of_two_scaling((docs, q) in corpus(), p in -20i32..20) {
            let (e, idx) = build(&docs);
            let query = e.embed(&words(&q));
            prop_assume!(!query.degenerate);
            let c = libm::pow(2.0, p as f64);
            let scaled = Embedding { vector: query.vector.iter().map(|v| v * c).collect(), degenerate: false };
            let a: Vec<_> = idx.search(&query, 100, None).unwrap().iter().map(|h| h.chunk.chunk_id.clone()).collect();
            let b: Vec<_> = idx.search(&scaled, 100, None).unwrap().iter().map(|h| h.chunk.chunk_id.clone()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ranking_survives_any_positive_scaling((docs, q) in corpus(), c in 1e-3f64..1e3) {
            let (e, idx) = build(&docs);
            let query = e.embed(&words(&q));
            prop_assume!(!query.degenerate);
            let scaled = Embedding { vector: query.vector.iter().map(|v| v * c).collect(), degenerate: false };
            let a = idx.search(&query, 100, None).unwrap();
            let b = idx.search(&scaled, 100, None).unwrap();
            // orderings agree wherever neighbouring similarities differ by more than rounding noise
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.similarity - y.similarity).abs() < 1e-12);
            }
            let distinct = |hits: &[Hit<'_>]| hits.windows(2).all(|w| w[0].similarity - w[1].similarity > 1e-12 || w[0].similarity == w[1].similarity);
            if distinct(&a) && distinct(&b) {
                let ids = |hits: &[Hit<'_>]| hits.iter().map(|h| h.chunk.chunk_id.clone()).collect::<Vec<_>>();
                prop_assert_eq!(ids(&a), ids(&b));
            }
        }

        #[test]
        fn filtered_results_are_sound_and_complete((docs, q) in corpus(), k in 1usize..10) {
            let (e, idx) = build(&docs);
            let query = e.embed(&words(&q));
            prop_assume!(!query.degenerate);
            let f = ChunkFilter { entity_tags: vec!["even".into()], ..Default::default() };
            let hits = idx.search(&query, k, Some(&f)).unwrap();
            prop_assert!(hits.len() <= k);
            prop_assert!(hits.iter().all(|h| f.accepts(h.chunk)));
            if hits.len() == k {
                let kth = hits[k - 1].similarity;
                for h in idx.search(&query, 1000, None).unwrap() {
                    if f.accepts(h.chunk) && !hits.iter().any(|x| x.chunk.chunk_id == h.chunk.chunk_id) {
                        prop_assert!(h.similarity <= kth);
                    }
                }
            } else {
                prop_assert_eq!(hits.len(), idx.chunks().filter(|c| f.accepts(c)).count());
            }
        }
    }
}
