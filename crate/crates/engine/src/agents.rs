//! Retrieval agents and answer generators.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use huddle_core::exec::{run_structured, run_tracking, run_vector};
use huddle_core::plan::PlanNode;
use huddle_core::synth::{AnswerSkeleton, Generator, SubAnswer, TemplateGenerator};
use serde::{Deserialize, Serialize};

use crate::fixtures::World;
use crate::runtime::Agent;

pub const STRUCTURED_AGENT: &str = "structured";
pub const TRACKING_AGENT: &str = "tracking";
pub const VECTOR_AGENT: &str = "vector";

/// Queries, rank lookups and play-id checks against the document store.
pub struct StructuredAgent(pub Arc<World>);

impl Agent for StructuredAgent {
    fn handle(&self, node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String> {
        run_structured(node, inputs, &self.0.documents).map_err(|e| e.to_string())
    }
}

/// Kinematics and field coverage over player tracking traces.
pub struct TrackingAgent(pub Arc<World>);

impl Agent for TrackingAgent {
    fn handle(&self, node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String> {
        run_tracking(node, inputs, &self.0.tracking).map_err(|e| e.to_string())
    }
}

/// Similarity search over transcripts, articles and reports.
pub struct VectorAgent(pub Arc<World>);

impl Agent for VectorAgent {
    fn handle(&self, node: &PlanNode, inputs: &BTreeMap<String, SubAnswer>) -> Result<SubAnswer, String> {
        run_vector(node, inputs, &self.0.vectors, &self.0.embedder).map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    skeleton: &'a AnswerSkeleton,
    /// What the template generator would say, as a reference rendering.
    draft: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Posts the answer skeleton to an HTTP endpoint that returns `{"text": ...}`.
/// Falls back to the template text when the call fails or returns nothing.
pub struct ExternalGenerator {
    url: String,
    agent: ureq::Agent,
}

impl ExternalGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        ExternalGenerator { url: url.into(), agent }
    }

    fn call(&self, skeleton: &AnswerSkeleton, draft: &str) -> Result<String, ureq::Error> {
        let mut response = self.agent.post(&self.url).send_json(GenerateRequest { skeleton, draft })?;
        let body: GenerateResponse = response.body_mut().read_json()?;
        Ok(body.text)
    }
}

impl Generator for ExternalGenerator {
    fn name(&self) -> &str {
        "external"
    }

    fn generate(&self, skeleton: &AnswerSkeleton) -> String {
        let draft = TemplateGenerator.generate(skeleton);
        match self.call(skeleton, &draft) {
            Ok(text) if !text.trim().is_empty() => text,
            Ok(_) => draft,
            Err(e) => {
                tracing::warn!(url = %self.url, error = %e, "external generator failed; using template text");
                draft
            }
        }
    }
}
