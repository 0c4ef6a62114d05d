//! Conversations, messages, feedback and the evaluation queue, persisted under
//! the state directory.
//!
//! Layout:
//! - `conversations/<id>.json`: one [`ConversationState`] per conversation
//! - `ledger.json`: message index, feedback ledger and evaluation queue

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use huddle_core::eval::{prioritize, EvalError, EvalQueueItem, FeedbackLedger, FeedbackRecord, Rating};
use huddle_core::interpreter::PatternHint;
use huddle_core::synth::Answer;
use huddle_core::{ConversationState, IntentKind, ParseError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{self, BenchError, BenchReport};
use crate::config::Config;
use crate::engine::{record_turn, Engine, EngineError, StageTimings};
use crate::runtime::TraceLog;

/// Longest accepted prompt, in characters.
pub const MAX_PROMPT_CHARS: usize = 4096;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("message text is empty")]
    EmptyText,
    #[error("message text has {0} characters; the limit is {MAX_PROMPT_CHARS}")]
    TooLong(usize),
    #[error("unknown conversation {0}")]
    UnknownConversation(String),
    #[error("unknown message {0}")]
    UnknownMessage(String),
    #[error("unknown trace {0}")]
    UnknownTrace(String),
    #[error("{error}")]
    Unparseable { error: ParseError, trace_id: String },
    #[error(transparent)]
    Engine(EngineError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("state file {path}: {message}")]
    State { path: PathBuf, message: String },
}

impl ServiceError {
    /// Nearest grammar patterns for an unparseable prompt.
    pub fn hints(&self) -> &[PatternHint] {
        match self {
            ServiceError::Unparseable { error: ParseError::Unparseable { nearest, .. }, .. } => nearest,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub message_id: String,
    pub answer: Answer,
    pub trace_id: String,
    pub timings: StageTimings,
    pub intent: IntentKind,
    pub challenge: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MessageRef {
    conversation_id: String,
    turn_index: u32,
    prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Ledger {
    messages: BTreeMap<String, MessageRef>,
    feedback: FeedbackLedger,
    queue: Vec<EvalQueueItem>,
    next_seq: u64,
}

impl Ledger {
    fn enqueue(&mut self, prompt: &str, challenge: f64) {
        match self.queue.iter_mut().find(|i| i.prompt == prompt) {
            Some(item) => item.challenge = item.challenge.max(challenge),
            None => {
                self.next_seq += 1;
                self.queue.push(EvalQueueItem {
                    prompt: prompt.to_string(),
                    challenge,
                    thumbs_down_count: 0,
                    enqueued_at: self.next_seq,
                });
            }
        }
    }

    fn recount(&mut self, prompt: &str) {
        let down =
            self.messages.iter().filter(|(id, m)| m.prompt == prompt && self.feedback.is_down(id)).count() as u32;
        if let Some(item) = self.queue.iter_mut().find(|i| i.prompt == prompt) {
            item.thumbs_down_count = down;
        }
    }
}

fn state_error(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::State { path: path.into(), message: e.to_string() }
}

fn read_state<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, ServiceError> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| state_error(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(state_error(path, e)),
    }
}

/// Writes through a temporary file so readers never see a partial document.
fn write_state<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let dir = path.parent().expect("state files live in a directory");
    fs::create_dir_all(dir).map_err(|e| state_error(dir, e))?;
    let text = serde_json::to_string_pretty(value).map_err(|e| state_error(path, e))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| state_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| state_error(path, e))
}

fn epoch_micros() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub struct Service {
    engine: Engine,
    config: Config,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    ledger: Mutex<Ledger>,
}

impl Service {
    pub fn open(config: Config) -> Result<Service, ServiceError> {
        let engine = Engine::from_config(&config).map_err(ServiceError::Engine)?;
        Service::with_engine(engine, config)
    }

    pub fn with_engine(engine: Engine, config: Config) -> Result<Service, ServiceError> {
        let ledger = read_state(&config.state_dir.join("ledger.json"))?.unwrap_or_default();
        Ok(Service { engine, config, locks: Mutex::default(), ledger: Mutex::new(ledger) })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    fn conversation_path(&self, id: &str) -> PathBuf {
        self.config.state_dir.join("conversations").join(format!("{id}.json"))
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table");
        Arc::clone(locks.entry(id.to_string()).or_default())
    }

    fn save_ledger(&self, ledger: &Ledger) -> Result<(), ServiceError> {
        write_state(&self.config.state_dir.join("ledger.json"), ledger)
    }

    pub fn create_conversation(&self) -> Result<String, ServiceError> {
        let id = format!("c{}", uuid::Uuid::new_v4().simple());
        write_state(&self.conversation_path(&id), &ConversationState::new(id.clone()))?;
        Ok(id)
    }

    pub fn conversation(&self, id: &str) -> Result<ConversationState, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::UnknownConversation(id.to_string()));
        }
        read_state(&self.conversation_path(id))?.ok_or_else(|| ServiceError::UnknownConversation(id.to_string()))
    }

    /// Runs one turn. Turns of the same conversation are serialized.
    pub fn post_message(&self, conversation_id: &str, text: &str) -> Result<MessageResponse, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyText);
        }
        let chars = text.chars().count();
        if chars > MAX_PROMPT_CHARS {
            return Err(ServiceError::TooLong(chars));
        }
        // reject unknown ids before creating a lock entry for them
        self.conversation(conversation_id)?;
        let lock = self.lock_for(conversation_id);
        let _turn = lock.lock().expect("conversation lock");
        let state = self.conversation(conversation_id)?;
        let trace_id = format!("q{}", uuid::Uuid::new_v4().simple());
        let reply = match self.engine.ask(&trace_id, text, &state) {
            Ok(r) => r,
            Err(EngineError::Parse(error)) => return Err(ServiceError::Unparseable { error, trace_id }),
            Err(e) => return Err(ServiceError::Engine(e)),
        };
        let next = record_turn(&state, text, &reply);
        let turn_index = next.turns.last().map_or(0, |t| t.turn_index);
        write_state(&self.conversation_path(conversation_id), &next)?;

        let message_id = format!("m-{conversation_id}-{turn_index}");
        {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            ledger.messages.insert(
                message_id.clone(),
                MessageRef { conversation_id: conversation_id.to_string(), turn_index, prompt: text.to_string() },
            );
            ledger.feedback.register_message(&message_id);
            ledger.enqueue(text, reply.challenge);
            self.save_ledger(&ledger)?;
        }
        Ok(MessageResponse {
            message_id,
            answer: reply.answer,
            trace_id,
            timings: reply.timings,
            intent: reply.parsed.intent.kind(),
            challenge: reply.challenge,
        })
    }

    /// Stores a rating; the latest rating of a message wins.
    pub fn post_feedback(
        &self,
        message_id: &str,
        rating: Rating,
        comment: Option<String>,
    ) -> Result<FeedbackRecord, ServiceError> {
        let (record, message) = {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            let record = ledger
                .feedback
                .record_feedback(message_id, rating, comment, epoch_micros())
                .map_err(|_: EvalError| ServiceError::UnknownMessage(message_id.to_string()))?;
            let message = ledger.messages.get(message_id).cloned().expect("registered messages are indexed");
            ledger.recount(&message.prompt);
            self.save_ledger(&ledger)?;
            (record, message)
        };
        let lock = self.lock_for(&message.conversation_id);
        let _turn = lock.lock().expect("conversation lock");
        let mut state = self.conversation(&message.conversation_id)?;
        if let Some(turn) = state.turn_mut(message.turn_index) {
            turn.feedback = Some(record.clone());
            write_state(&self.conversation_path(&message.conversation_id), &state)?;
        }
        Ok(record)
    }

    pub fn feedback(&self, message_id: &str) -> Option<FeedbackRecord> {
        self.ledger.lock().expect("ledger lock").feedback.get(message_id).cloned()
    }

    pub fn trace(&self, trace_id: &str) -> Result<TraceLog, ServiceError> {
        self.engine.runtime().trace(trace_id).map_err(|_| ServiceError::UnknownTrace(trace_id.to_string()))
    }

    /// The evaluation queue, highest priority first.
    pub fn eval_queue(&self) -> Vec<EvalQueueItem> {
        let ledger = self.ledger.lock().expect("ledger lock");
        prioritize(&ledger.queue, self.config.thumbs_down_weight)
    }

    pub fn bench_report(&self) -> Result<BenchReport, ServiceError> {
        Ok(bench::report(&self.config)?)
    }
}
