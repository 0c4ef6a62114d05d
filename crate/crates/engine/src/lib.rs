//! Conversational NFL query engine: fixture loading, the agent runtime, the
//! query pipeline, persistence and the HTTP gateway.

pub mod agents;
pub mod bench;
pub mod config;
pub mod engine;
pub mod fixtures;
pub mod http;
pub mod runtime;
pub mod service;

pub use config::Config;
pub use engine::{Engine, EngineError, Reply};
pub use fixtures::World;
pub use runtime::{Agent, ExecutionMode, Runtime, TraceLog};
pub use service::{MessageResponse, Service, ServiceError};
