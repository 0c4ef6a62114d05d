//! In-process agent graph and message bus.
//!
//! Each registered agent owns a worker thread fed by a bounded queue. The
//! worker takes requests in arrival order and starts each one on its own
//! handler thread, up to a per-agent in-flight limit, so a node that overruns
//! its budget can be abandoned without stalling the agent.
//! Every request, response, failure and control message is recorded as an
//! [`Envelope`] in the [`TraceStore`] under the query's correlation id.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use huddle_core::plan::{CycleError, NodeTarget, PlanNode, QueryPlan};
use huddle_core::synth::{FailureReason, NodeFailure, NodeOutcome, SubAnswer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bound of an agent's inbox.
pub const QUEUE_BOUND: usize = 1024;
/// Default number of requests one agent runs at once.
pub const MAX_IN_FLIGHT: usize = 64;
/// Agent id the dispatcher sends from.
pub const ORCHESTRATOR: &str = "orchestrator";

pub trait Agent: Send + Sync {
    /// Answers one node. `inputs` holds the results of the node's predecessors.
    fn handle(&self, node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String>;
}

/// Monotonic microsecond clock.
pub trait Clock: Send + Sync {
    fn now_micros(&self) -> u64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    start: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock { start: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now_micros(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub event: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Node(PlanNode),
    SubAnswer(SubAnswer),
    Failure(NodeFailure),
    Control(Control),
}

impl Payload {
    pub fn is_request(&self) -> bool {
        matches!(self, Payload::Node(_))
    }

    pub fn is_reply(&self) -> bool {
        matches!(self, Payload::SubAnswer(_) | Payload::Failure(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub envelope_id: String,
    pub correlation_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub from: String,
    pub to: String,
    pub payload: Payload,
    /// Microseconds on the runtime clock.
    pub enqueued_at: u64,
    pub processed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub correlation_id: String,
    /// Ordered by `enqueued_at`; equal timestamps keep recording order.
    pub envelopes: Vec<Envelope>,
}

impl TraceLog {
    pub fn requests(&self) -> impl Iterator<Item = &Envelope> {
        self.envelopes.iter().filter(|e| e.payload.is_request())
    }

    pub fn replies(&self) -> impl Iterator<Item = &Envelope> {
        self.envelopes.iter().filter(|e| e.payload.is_reply())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("agent {0} is already registered")]
    DuplicateAgent(String),
    #[error("{target:?} nodes already route to {agent}")]
    RouteConflict { target: NodeTarget, agent: String },
    #[error("no agent handles {target:?} (node {node_id})")]
    UnroutablePlan { node_id: String, target: NodeTarget },
    #[error("unknown correlation {0}")]
    UnknownCorrelation(String),
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// The last `retention` correlations' envelopes.
pub struct TraceStore {
    retention: usize,
    inner: Mutex<TraceInner>,
}

#[derive(Default)]
struct TraceInner {
    logs: BTreeMap<String, (u64, Vec<Envelope>)>,
    order: VecDeque<String>,
}

impl TraceStore {
    pub fn new(retention: usize) -> Self {
        TraceStore { retention: retention.max(1), inner: Mutex::default() }
    }

    /// Starts a correlation, evicting the oldest beyond the retention window.
    pub fn open(&self, correlation_id: &str) {
        let mut inner = self.inner.lock().expect("trace lock");
        if inner.logs.contains_key(correlation_id) {
            return;
        }
        inner.logs.insert(correlation_id.to_string(), (0, Vec::new()));
        inner.order.push_back(correlation_id.to_string());
        while inner.order.len() > self.retention {
            if let Some(old) = inner.order.pop_front() {
                inner.logs.remove(&old);
            }
        }
    }

    /// Allocates the next envelope id of a correlation.
    fn next_id(&self, correlation_id: &str) -> String {
        self.open(correlation_id);
        let mut inner = self.inner.lock().expect("trace lock");
        let (seq, _) = inner.logs.get_mut(correlation_id).expect("opened above");
        *seq += 1;
        format!("{correlation_id}:{seq}")
    }

    fn record(&self, envelope: Envelope) {
        let mut inner = self.inner.lock().expect("trace lock");
        // an evicted correlation stays evicted
        if let Some((_, log)) = inner.logs.get_mut(&envelope.correlation_id) {
            let at = log.partition_point(|e| e.enqueued_at <= envelope.enqueued_at);
            log.insert(at, envelope);
        }
    }

    fn set_processed(&self, correlation_id: &str, envelope_id: &str, at: u64) {
        let mut inner = self.inner.lock().expect("trace lock");
        if let Some((_, log)) = inner.logs.get_mut(correlation_id) {
            if let Some(e) = log.iter_mut().find(|e| e.envelope_id == envelope_id) {
                e.processed_at = at;
            }
        }
    }

    pub fn get(&self, correlation_id: &str) -> Result<TraceLog, RuntimeError> {
        let inner = self.inner.lock().expect("trace lock");
        let (_, log) = inner
            .logs
            .get(correlation_id)
            .ok_or_else(|| RuntimeError::UnknownCorrelation(correlation_id.to_string()))?;
        Ok(TraceLog { correlation_id: correlation_id.to_string(), envelopes: log.clone() })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("trace lock").order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Job {
    node: PlanNode,
    inputs: BTreeMap<String, SubAnswer>,
    started_at: Arc<AtomicU64>,
    reply: mpsc::Sender<Reply>,
}

struct Reply {
    result: Result<SubAnswer, String>,
    finished_at: u64,
}

struct AgentHandle {
    inbox: SyncSender<Job>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentOptions {
    pub queue_bound: usize,
    pub max_in_flight: usize,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions { queue_bound: QUEUE_BOUND, max_in_flight: MAX_IN_FLIGHT }
    }
}

/// Counts running handlers; the worker waits here when an agent is saturated.
#[derive(Default)]
struct Slots {
    running: Mutex<usize>,
    freed: Condvar,
}

impl Slots {
    fn acquire(&self, max: usize) {
        let mut running = self.running.lock().expect("slot lock");
        while *running >= max {
            running = self.freed.wait(running).expect("slot lock");
        }
        *running += 1;
    }

    fn release(&self) {
        *self.running.lock().expect("slot lock") -= 1;
        self.freed.notify_one();
    }
}

fn spawn_worker(id: &str, agent: Arc<dyn Agent>, clock: Arc<dyn Clock>, inbox: Receiver<Job>, max_in_flight: usize) {
    let name = format!("agent-{id}");
    let slots = Arc::new(Slots::default());
    thread::Builder::new()
        .name(name.clone())
        .spawn(move || {
            for job in inbox {
                slots.acquire(max_in_flight.max(1));
                let agent = Arc::clone(&agent);
                let clock = Arc::clone(&clock);
                let done = Arc::clone(&slots);
                let spawned = thread::Builder::new().name(name.clone()).spawn(move || {
                    job.started_at.store(clock.now_micros().max(1), Ordering::SeqCst);
                    let result = agent.handle(&job.node, &job.inputs);
                    done.release();
                    // the dispatcher may have given up on this node already
                    let _ = job.reply.send(Reply { result, finished_at: clock.now_micros() });
                });
                if let Err(e) = spawned {
                    slots.release();
                    tracing::error!(error = %e, "cannot start handler thread");
                }
            }
        })
        .expect("spawn agent worker");
}

/// Registered agents and the target routing table.
#[derive(Default)]
pub struct AgentGraph {
    agents: BTreeMap<String, AgentHandle>,
    routes: BTreeMap<NodeTarget, String>,
}

impl AgentGraph {
    pub fn agent_ids(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }

    pub fn route(&self, target: NodeTarget) -> Option<&str> {
        self.routes.get(&target).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// All nodes of a stage in flight at once.
    Parallel,
    /// One node at a time.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub outcomes: BTreeMap<String, NodeOutcome>,
    pub wall: Duration,
}

pub struct Runtime {
    graph: RwLock<AgentGraph>,
    traces: TraceStore,
    clock: Arc<dyn Clock>,
}

impl Runtime {
    pub fn new(retention: usize) -> Self {
        Runtime::with_clock(retention, Arc::new(MonotonicClock::default()))
    }

    pub fn with_clock(retention: usize, clock: Arc<dyn Clock>) -> Self {
        Runtime { graph: RwLock::default(), traces: TraceStore::new(retention), clock }
    }

    pub fn now_micros(&self) -> u64 {
        self.clock.now_micros()
    }

    pub fn traces(&self) -> &TraceStore {
        &self.traces
    }

    pub fn trace(&self, correlation_id: &str) -> Result<TraceLog, RuntimeError> {
        self.traces.get(correlation_id)
    }

    pub fn register_agent(&self, id: &str, agent: Arc<dyn Agent>, handles: &[NodeTarget]) -> Result<(), RuntimeError> {
        self.register_agent_with(id, agent, handles, AgentOptions::default())
    }

    pub fn register_agent_with(
        &self,
        id: &str,
        agent: Arc<dyn Agent>,
        handles: &[NodeTarget],
        options: AgentOptions,
    ) -> Result<(), RuntimeError> {
        let mut graph = self.graph.write().expect("graph lock");
        if graph.agents.contains_key(id) {
            return Err(RuntimeError::DuplicateAgent(id.to_string()));
        }
        for target in handles {
            if let Some(owner) = graph.routes.get(target) {
                // a route left behind by a removed agent may be rebound
                if graph.agents.contains_key(owner) {
                    return Err(RuntimeError::RouteConflict { target: *target, agent: owner.clone() });
                }
            }
        }
        let (tx, rx) = mpsc::sync_channel(options.queue_bound);
        spawn_worker(id, agent, Arc::clone(&self.clock), rx, options.max_in_flight);
        graph.agents.insert(id.to_string(), AgentHandle { inbox: tx });
        for target in handles {
            graph.routes.insert(*target, id.to_string());
        }
        Ok(())
    }

    /// Removes an agent; its routes stay in the table and fail the next dispatch
    /// that needs them.
    pub fn remove_agent(&self, id: &str) -> bool {
        self.graph.write().expect("graph lock").agents.remove(id).is_some()
    }

    pub fn route(&self, target: NodeTarget) -> Option<String> {
        self.graph.read().expect("graph lock").route(target).map(str::to_string)
    }

    /// Records a control envelope and returns its id.
    pub fn control(
        &self,
        correlation_id: &str,
        parent_id: Option<&str>,
        from: &str,
        to: &str,
        event: &str,
        body: serde_json::Value,
    ) -> String {
        let now = self.clock.now_micros();
        let envelope_id = self.traces.next_id(correlation_id);
        self.traces.record(Envelope {
            envelope_id: envelope_id.clone(),
            correlation_id: correlation_id.to_string(),
            parent_id: parent_id.map(str::to_string),
            from: from.to_string(),
            to: to.to_string(),
            payload: Payload::Control(Control { event: event.to_string(), body }),
            enqueued_at: now,
            processed_at: now,
        });
        envelope_id
    }

    /// Executes `plan` stage by stage. Fails before sending anything if a node
    /// has no live agent.
    pub fn dispatch(
        &self,
        correlation_id: &str,
        parent_id: Option<&str>,
        plan: &QueryPlan,
        budget: Duration,
        mode: ExecutionMode,
    ) -> Result<Dispatch, RuntimeError> {
        let stages = plan.stages()?;
        let mut inboxes: BTreeMap<String, (String, SyncSender<Job>)> = BTreeMap::new();
        {
            let graph = self.graph.read().expect("graph lock");
            for node in &plan.nodes {
                let agent = graph.routes.get(&node.target).ok_or_else(|| RuntimeError::UnroutablePlan {
                    node_id: node.node_id.clone(),
                    target: node.target,
                })?;
                let handle = graph
                    .agents
                    .get(agent)
                    .ok_or_else(|| RuntimeError::RouteConflict { target: node.target, agent: agent.clone() })?;
                inboxes.insert(node.node_id.clone(), (agent.clone(), handle.inbox.clone()));
            }
        }
        self.traces.open(correlation_id);

        let started = Instant::now();
        let mut answered: BTreeMap<String, SubAnswer> = BTreeMap::new();
        let mut outcomes = BTreeMap::new();
        for stage in stages {
            let ids: Vec<String> = stage.into_iter().collect();
            match mode {
                ExecutionMode::Parallel => {
                    let pending: Vec<_> = ids
                        .iter()
                        .map(|id| self.send(correlation_id, parent_id, plan, id, &answered, &inboxes[id], budget))
                        .collect();
                    for p in pending {
                        let outcome = self.collect(p);
                        outcomes.insert(outcome.0, outcome.1);
                    }
                }
                ExecutionMode::Sequential => {
                    for id in &ids {
                        let p = self.send(correlation_id, parent_id, plan, id, &answered, &inboxes[id], budget);
                        let outcome = self.collect(p);
                        outcomes.insert(outcome.0, outcome.1);
                    }
                }
            }
            // results become visible only to later stages
            for id in &ids {
                if let Some(NodeOutcome::Answered(a)) = outcomes.get(id) {
                    answered.insert(id.clone(), a.clone());
                }
            }
        }
        Ok(Dispatch { outcomes, wall: started.elapsed() })
    }

    #[allow(clippy::too_many_arguments)]
    fn send(
        &self,
        correlation_id: &str,
        parent_id: Option<&str>,
        plan: &QueryPlan,
        node_id: &str,
        answered: &BTreeMap<String, SubAnswer>,
        (agent, inbox): &(String, SyncSender<Job>),
        budget: Duration,
    ) -> Pending {
        let node = plan.node(node_id).expect("stage ids come from the plan").clone();
        let mut wanted: Vec<&str> = plan.predecessors(node_id);
        wanted.extend(node.payload.inputs());
        let inputs: BTreeMap<String, SubAnswer> =
            wanted.into_iter().filter_map(|id| answered.get(id).map(|a| (id.to_string(), a.clone()))).collect();
        let envelope_id = self.traces.next_id(correlation_id);
        let enqueued_at = self.clock.now_micros();
        let started_at = Arc::new(AtomicU64::new(0));
        let (reply_tx, reply_rx) = mpsc::channel();
        let request = Envelope {
            envelope_id,
            correlation_id: correlation_id.to_string(),
            parent_id: parent_id.map(str::to_string),
            from: ORCHESTRATOR.to_string(),
            to: agent.clone(),
            payload: Payload::Node(node.clone()),
            enqueued_at,
            processed_at: enqueued_at,
        };
        self.traces.record(request.clone());
        let job = Job { node, inputs, started_at: Arc::clone(&started_at), reply: reply_tx };
        let state = match inbox.try_send(job) {
            Ok(()) => SendState::Queued(reply_rx),
            Err(TrySendError::Full(_)) => SendState::Rejected(FailureReason::QueueFull),
            Err(TrySendError::Disconnected(_)) => SendState::Rejected(FailureReason::Error("agent stopped".into())),
        };
        Pending { request, started_at, deadline: Instant::now() + budget, state }
    }

    fn collect(&self, p: Pending) -> (String, NodeOutcome) {
        let Pending { mut request, started_at, deadline, state } = p;
        let Payload::Node(node) = &request.payload else { unreachable!("requests carry nodes") };
        let node_id = node.node_id.clone();
        let agent = request.to.clone();
        let result = match state {
            SendState::Rejected(reason) => Err((reason, None)),
            SendState::Queued(rx) => match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
                Ok(Reply { result: Ok(a), finished_at }) => Ok((a, finished_at)),
                Ok(Reply { result: Err(e), finished_at }) => Err((FailureReason::Error(e), Some(finished_at))),
                Err(mpsc::RecvTimeoutError::Timeout) => Err((FailureReason::Timeout, None)),
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    Err((FailureReason::Error("handler panicked".into()), None))
                }
            },
        };
        let now = self.clock.now_micros();
        let picked_up = started_at.load(Ordering::SeqCst);
        request.processed_at = if picked_up == 0 { now } else { picked_up }.max(request.enqueued_at);
        let (payload, from, sent_at, outcome) = match result {
            Ok((answer, finished_at)) => {
                (Payload::SubAnswer(answer.clone()), agent.clone(), finished_at, NodeOutcome::Answered(answer))
            }
            Err((reason, finished_at)) => {
                let failure = NodeFailure { node_id: node_id.clone(), reason };
                // timeouts and rejections are reported by the bus itself
                let from = if finished_at.is_some() { agent.clone() } else { ORCHESTRATOR.to_string() };
                (Payload::Failure(failure.clone()), from, finished_at.unwrap_or(now), NodeOutcome::Failed(failure))
            }
        };
        let sent_at = sent_at.max(request.processed_at);
        let reply = Envelope {
            envelope_id: self.traces.next_id(&request.correlation_id),
            correlation_id: request.correlation_id.clone(),
            parent_id: Some(request.envelope_id.clone()),
            from,
            to: ORCHESTRATOR.to_string(),
            payload,
            enqueued_at: sent_at,
            processed_at: now.max(sent_at),
        };
        self.traces.set_processed(&request.correlation_id, &request.envelope_id, request.processed_at);
        self.traces.record(reply);
        (node_id, outcome)
    }
}

enum SendState {
    Queued(Receiver<Reply>),
    Rejected(FailureReason),
}

struct Pending {
    request: Envelope,
    started_at: Arc<AtomicU64>,
    deadline: Instant,
    state: SendState,
}
