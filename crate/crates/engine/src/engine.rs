//! The query pipeline: augment, parse, plan, dispatch, synthesize.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use huddle_core::eval::{EngineReply, GoldenEngine};
use huddle_core::hash::fnv1a;
use huddle_core::interpreter::{AugmentedPrompt, ConfigError as GrammarError};
use huddle_core::plan::{build_plan, challenge_score, NodeTarget, PlanError};
use huddle_core::synth::{synthesize, Answer, Generator, NodeOutcome, SynthError, SynthOptions, TemplateGenerator};
use huddle_core::{ConversationState, Interpreter, ParseError, ParsedQuery, QueryPlan, Turn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{
    ExternalGenerator, StructuredAgent, TrackingAgent, VectorAgent, STRUCTURED_AGENT, TRACKING_AGENT, VECTOR_AGENT,
};
use crate::config::{Config, GeneratorKind};
use crate::fixtures::{FixtureError, World};
use crate::runtime::{ExecutionMode, Runtime, RuntimeError, ORCHESTRATOR};

const USER: &str = "user";
const AUGMENTER: &str = "augmenter";
const INTERPRETER: &str = "interpreter";
const PLANNER: &str = "planner";
const SYNTHESIZER: &str = "synthesizer";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("grammar: {0}")]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

/// Wall time spent in each pipeline stage, microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub augment_us: u64,
    pub parse_us: u64,
    pub plan_us: u64,
    pub dispatch_us: u64,
    pub synthesize_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub augmented: AugmentedPrompt,
    pub parsed: ParsedQuery,
    pub plan: QueryPlan,
    pub outcomes: BTreeMap<String, NodeOutcome>,
    pub answer: Answer,
    pub challenge: f64,
    pub timings: StageTimings,
}

fn micros(d: Duration) -> u64 {
    d.as_micros() as u64
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

pub struct Engine {
    world: Arc<World>,
    interpreter: Interpreter,
    runtime: Runtime,
    generator: Box<dyn Generator>,
    options: SynthOptions,
    budget: Duration,
    mode: ExecutionMode,
}

impl Engine {
    /// Loads fixtures and the ingested layer named by `config`.
    pub fn from_config(config: &Config) -> Result<Engine, EngineError> {
        let world = World::load(&config.fixtures_dir, Some(&config.state_dir))?;
        Engine::new(Arc::new(world), config)
    }

    /// Builds the interpreter and registers the three retrieval agents.
    pub fn new(world: Arc<World>, config: &Config) -> Result<Engine, EngineError> {
        let interpreter = Interpreter::new(world.lexicon.clone(), world.grammar.clone(), config.clock)?
            .with_home_team(config.home_team.clone());
        let runtime = Runtime::new(config.trace_retention);
        runtime.register_agent(
            STRUCTURED_AGENT,
            Arc::new(StructuredAgent(Arc::clone(&world))),
            &[NodeTarget::Structured],
        )?;
        runtime.register_agent(TRACKING_AGENT, Arc::new(TrackingAgent(Arc::clone(&world))), &[NodeTarget::Tracking])?;
        runtime.register_agent(VECTOR_AGENT, Arc::new(VectorAgent(Arc::clone(&world))), &[NodeTarget::Vector])?;
        let generator: Box<dyn Generator> = match (config.generator, &config.external_url) {
            (GeneratorKind::External, Some(url)) => Box::new(ExternalGenerator::new(url.clone(), config.timeout())),
            _ => Box::new(TemplateGenerator),
        };
        Ok(Engine {
            world,
            interpreter,
            runtime,
            generator,
            options: SynthOptions { media_base_url: config.media_base_url.clone(), clock: config.clock },
            budget: config.timeout(),
            mode: if config.parallel { ExecutionMode::Parallel } else { ExecutionMode::Sequential },
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn interpreter(&self) -> &Interpreter {
        &self.interpreter
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ExecutionMode) {
        self.mode = mode;
    }

    /// Answers `prompt` in the context of `state`. Does not record the turn.
    pub fn ask(&self, correlation_id: &str, prompt: &str, state: &ConversationState) -> Result<Reply, EngineError> {
        let rt = &self.runtime;
        let catalog = &self.world.catalog;
        let started = Instant::now();
        let mut timings = StageTimings::default();
        rt.traces().open(correlation_id);
        let received = rt.control(correlation_id, None, USER, AUGMENTER, "prompt", json!(prompt));

        let t = Instant::now();
        let augmented = self.interpreter.augment(prompt, state, catalog);
        timings.augment_us = micros(t.elapsed());
        let augmented_id =
            rt.control(correlation_id, Some(&received), AUGMENTER, INTERPRETER, "augmented", to_json(&augmented));

        let t = Instant::now();
        let parsed = match self.interpreter.parse(prompt, state, catalog) {
            Ok(p) => p,
            Err(e) => {
                rt.control(correlation_id, Some(&augmented_id), INTERPRETER, USER, "parse_error", json!(e.to_string()));
                return Err(e.into());
            }
        };
        timings.parse_us = micros(t.elapsed());
        let parsed_id =
            rt.control(correlation_id, Some(&augmented_id), INTERPRETER, PLANNER, "parsed", to_json(&parsed));

        let t = Instant::now();
        let plan = build_plan(&parsed, catalog)?;
        let challenge = challenge_score(&plan);
        timings.plan_us = micros(t.elapsed());
        let mut plan_debug = to_json(&plan);
        if let Some(obj) = plan_debug.as_object_mut() {
            // the parsed query is already in the trace
            obj.remove("origin");
            obj.insert("challenge".into(), json!(challenge));
        }
        let plan_id = rt.control(correlation_id, Some(&parsed_id), PLANNER, ORCHESTRATOR, "plan", plan_debug);

        let t = Instant::now();
        let dispatch = rt.dispatch(correlation_id, Some(&plan_id), &plan, self.budget, self.mode)?;
        timings.dispatch_us = micros(t.elapsed());
        let results_id = rt.control(correlation_id, Some(&plan_id), ORCHESTRATOR, SYNTHESIZER, "results", json!(null));

        let t = Instant::now();
        let answer =
            match synthesize(&parsed, &plan, &dispatch.outcomes, catalog, self.generator.as_ref(), &self.options) {
                Ok(a) => a,
                Err(e) => {
                    rt.control(
                        correlation_id,
                        Some(&results_id),
                        SYNTHESIZER,
                        USER,
                        "synthesis_error",
                        json!(e.to_string()),
                    );
                    return Err(e.into());
                }
            };
        timings.synthesize_us = micros(t.elapsed());
        rt.control(correlation_id, Some(&results_id), SYNTHESIZER, USER, "answer", json!(answer.text));
        timings.total_us = micros(started.elapsed());

        Ok(Reply { augmented, parsed, plan, outcomes: dispatch.outcomes, answer, challenge, timings })
    }
}

/// Hex digest of an answer text, kept in memory instead of the text itself.
pub fn digest(text: &str) -> String {
    format!("{:016x}", fnv1a(&[text]))
}

/// `state` with the answered turn appended.
pub fn record_turn(state: &ConversationState, prompt: &str, reply: &Reply) -> ConversationState {
    state
        .record_turn(Turn {
            turn_index: state.next_turn_index(),
            user_prompt: prompt.to_string(),
            parsed: reply.parsed.clone(),
            answer_digest: digest(&reply.answer.text),
            feedback: None,
        })
        .expect("turn index comes from the state itself")
}

/// Runs golden cases directly against an [`Engine`], without the service layer.
pub struct GoldenDriver<'a> {
    pub engine: &'a Engine,
    conversations: usize,
}

impl<'a> GoldenDriver<'a> {
    pub fn new(engine: &'a Engine) -> Self {
        GoldenDriver { engine, conversations: 0 }
    }
}

impl GoldenEngine for GoldenDriver<'_> {
    type Conversation = ConversationState;

    fn new_conversation(&mut self) -> Result<ConversationState, String> {
        self.conversations += 1;
        Ok(ConversationState::new(format!("golden-{}", self.conversations)))
    }

    fn ask(&mut self, conversation: &mut ConversationState, prompt: &str) -> Result<EngineReply, String> {
        let correlation = format!("{}-{}", conversation.conversation_id, conversation.next_turn_index());
        let reply = self.engine.ask(&correlation, prompt, conversation).map_err(|e| e.to_string())?;
        *conversation = record_turn(conversation, prompt, &reply);
        Ok(EngineReply { intent: reply.parsed.intent.kind(), answer: reply.answer })
    }
}
