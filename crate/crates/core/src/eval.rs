//! Golden-suite scoring, latency histograms, feedback and the evaluation queue.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpreter::IntentKind;
use crate::synth::Answer;
use crate::value::Scalar;

/// Default overflow threshold for latency histograms, in seconds.
pub const DEFAULT_LATENCY_CAP: f64 = 20.0;
/// Default weight of one thumbs-down in queue priority.
pub const DEFAULT_THUMBS_DOWN_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("golden suite is empty")]
    EmptySuite,
    #[error("bucket width must be positive")]
    NonPositiveBucket,
    #[error("latency sample {0} is negative or not a number")]
    InvalidSample(usize),
    #[error("unknown message {0}")]
    UnknownMessage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFact {
    pub name: String,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenTurn {
    pub prompt: String,
    pub expected_intent: IntentKind,
    pub expected_facts: Vec<ExpectedFact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub case_id: String,
    pub turns: Vec<GoldenTurn>,
}

/// What the engine under test reports for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineReply {
    pub intent: IntentKind,
    pub answer: Answer,
}

/// Anything that can hold conversations and answer prompts.
pub trait GoldenEngine {
    type Conversation;
    fn new_conversation(&mut self) -> Result<Self::Conversation, String>;
    fn ask(&mut self, conversation: &mut Self::Conversation, prompt: &str) -> Result<EngineReply, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub prompt: String,
    pub expected_intent: IntentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_intent: Option<IntentKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TurnOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.actual_intent == Some(self.expected_intent) && self.missing_facts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub passed: bool,
    pub turns: Vec<TurnOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenReport {
    pub accuracy: f64,
    pub passed: usize,
    pub total: usize,
    pub cases: Vec<CaseOutcome>,
}

/// Binary pass/fail per case; accuracy is passes over cases.
pub fn run_golden<E: GoldenEngine>(suite: &[GoldenCase], engine: &mut E) -> Result<GoldenReport, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let mut cases = Vec::with_capacity(suite.len());
    for case in suite {
        let mut turns = Vec::new();
        match engine.new_conversation() {
            Err(e) => turns.push(TurnOutcome {
                prompt: String::new(),
                expected_intent: case.turns.first().map_or(IntentKind::StatLookup, |t| t.expected_intent),
                actual_intent: None,
                missing_facts: Vec::new(),
                error: Some(e),
            }),
            Ok(mut conv) => {
                for turn in &case.turns {
                    let outcome = match engine.ask(&mut conv, &turn.prompt) {
                        Ok(reply) => TurnOutcome {
                            prompt: turn.prompt.clone(),
                            expected_intent: turn.expected_intent,
                            actual_intent: Some(reply.intent),
                            missing_facts: turn
                                .expected_facts
                                .iter()
                                .filter(|f| !fact_present(&reply.answer, &f.value))
                                .map(|f| f.name.clone())
                                .collect(),
                            error: None,
                        },
                        Err(e) => TurnOutcome {
                            prompt: turn.prompt.clone(),
                            expected_intent: turn.expected_intent,
                            actual_intent: None,
                            missing_facts: Vec::new(),
                            error: Some(e),
                        },
                    };
                    turns.push(outcome);
                }
            }
        }
        let passed = !turns.is_empty() && turns.iter().all(TurnOutcome::passed);
        cases.push(CaseOutcome { case_id: case.case_id.clone(), passed, turns });
    }
    Ok(report_from(cases))
}

pub fn report_from(cases: Vec<CaseOutcome>) -> GoldenReport {
    let passed = cases.iter().filter(|c| c.passed).count();
    let total = cases.len();
    GoldenReport { accuracy: if total == 0 { 0.0 } else { passed as f64 / total as f64 }, passed, total, cases }
}

/// Numbers written in `text`, with thousands separators, currency signs and
/// ordinal suffixes removed ("$7,725,916" -> 7725916, "39th" -> 39, "7-5" -> 7 and 5).
pub fn extract_numbers(text: &str) -> Vec<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let mut buf = String::new();
        while i < chars.len() {
            let c = chars[i];
            let next_digit = chars.get(i + 1).is_some_and(char::is_ascii_digit);
            if c.is_ascii_digit() {
                buf.push(c);
            } else if c == ',' && next_digit && !buf.contains('.') {
                // thousands separator
            } else if c == '.' && next_digit && !buf.contains('.') {
                buf.push('.');
            } else {
                break;
            }
            i += 1;
        }
        if let Ok(v) = buf.parse::<f64>() {
            out.push(v);
        }
    }
    out
}

fn number_matches(found: f64, expected: f64) -> bool {
    (found - expected).abs() <= 1e-9 * expected.abs().max(1.0)
}

/// True when `expected` can be read off the answer's text, table cells or verdict.
pub fn fact_present(answer: &Answer, expected: &Scalar) -> bool {
    let cells = answer.tables.iter().flat_map(|t| t.rows.iter().flatten());
    match expected {
        Scalar::Null => true,
        Scalar::Bool(b) => cells.clone().any(|c| *c == Scalar::Bool(*b)),
        Scalar::Int(_) | Scalar::Float(_) => {
            let want = expected.as_f64().unwrap_or(f64::NAN);
            extract_numbers(&answer.text).into_iter().any(|n| number_matches(n, want))
                || cells.clone().filter_map(Scalar::as_f64).any(|n| number_matches(n, want))
        }
        Scalar::Text(s) => {
            let needle = s.to_lowercase();
            answer.text.to_lowercase().contains(&needle)
                || cells.clone().filter_map(Scalar::as_str).any(|c| c.to_lowercase() == needle)
                || answer.verdict.as_ref().is_some_and(|v| v.winner.as_deref() == Some(s.as_str()))
                || answer.media_links.iter().any(|m| m.play_id == *s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bucket_width: f64,
    pub cap: f64,
    /// Counts for `[0,w)`, `[w,2w)`, ... up to the cap, then one overflow bucket.
    pub counts: Vec<usize>,
    pub samples: usize,
    pub mean: Option<f64>,
}

impl Histogram {
    pub fn overflow(&self) -> usize {
        self.counts.last().copied().unwrap_or(0)
    }

    /// Lower edge of bucket `i`, in seconds.
    pub fn lower_edge(&self, i: usize) -> f64 {
        if i + 1 == self.counts.len() {
            self.cap
        } else {
            i as f64 * self.bucket_width
        }
    }
}

/// Buckets latency samples (seconds). Samples at or beyond `cap` land in the overflow bucket.
pub fn latency_histogram(samples: &[f64], bucket_width: f64, cap: f64) -> Result<Histogram, EvalError> {
    if !(bucket_width > 0.0) || !bucket_width.is_finite() {
        return Err(EvalError::NonPositiveBucket);
    }
    if let Some(i) = samples.iter().position(|s| !(*s >= 0.0)) {
        return Err(EvalError::InvalidSample(i));
    }
    let regular = libm::ceil(cap / bucket_width).max(1.0) as usize;
    let mut counts = alloc::vec![0usize; regular + 1];
    for &s in samples {
        let idx = if s >= cap { regular } else { ((s / bucket_width) as usize).min(regular - 1) };
        counts[idx] += 1;
    }
    let mean = (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64);
    Ok(Histogram { bucket_width, cap, counts, samples: samples.len(), mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub message_id: String,
    pub rating: Rating,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// Microseconds since the engine clock's epoch.
    pub created_at: u64,
}

/// Latest rating per message, restricted to messages the ledger knows about.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLedger {
    known: BTreeSet<String>,
    records: BTreeMap<String, FeedbackRecord>,
}

impl FeedbackLedger {
    pub fn register_message(&mut self, message_id: &str) {
        self.known.insert(message_id.to_string());
    }

    pub fn record_feedback(
        &mut self,
        message_id: &str,
        rating: Rating,
        comment: Option<String>,
        created_at: u64,
    ) -> Result<FeedbackRecord, EvalError> {
        if !self.known.contains(message_id) {
            return Err(EvalError::UnknownMessage(message_id.to_string()));
        }
        let record = FeedbackRecord { message_id: message_id.to_string(), rating, comment, created_at };
        self.records.insert(message_id.to_string(), record.clone());
        Ok(record)
    }

    pub fn get(&self, message_id: &str) -> Option<&FeedbackRecord> {
        self.records.get(message_id)
    }

    pub fn is_down(&self, message_id: &str) -> bool {
        self.get(message_id).is_some_and(|r| r.rating == Rating::Down)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQueueItem {
    pub prompt: String,
    pub challenge: f64,
    pub thumbs_down_count: u32,
    pub enqueued_at: u64,
}

impl EvalQueueItem {
    pub fn priority(&self, thumbs_down_weight: f64) -> f64 {
        self.challenge + thumbs_down_weight * f64::from(self.thumbs_down_count)
    }
}

/// Highest priority first; equal priorities keep FIFO order by `enqueued_at`.
pub fn prioritize(items: &[EvalQueueItem], thumbs_down_weight: f64) -> Vec<EvalQueueItem> {
    let mut out = items.to_vec();
    out.sort_by(|a, b| {
        b.priority(thumbs_down_weight)
            .partial_cmp(&a.priority(thumbs_down_weight))
            .unwrap_or(Ordering::Equal)
            .then(a.enqueued_at.cmp(&b.enqueued_at))
    });
    out
}
