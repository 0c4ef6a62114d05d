//! JSON-over-HTTP gateway.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use huddle_core::eval::Rating;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::EngineError;
use crate::service::{Service, ServiceError};

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub rating: Rating,
    #[serde(default)]
    pub comment: Option<String>,
}

#[derive(Debug, Serialize)]
struct Created {
    conversation_id: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

fn error_body(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(json!({ "error": code, "message": message }))).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let message = e.to_string();
        match &e {
            ServiceError::EmptyText | ServiceError::TooLong(_) => {
                error_body(StatusCode::BAD_REQUEST, "bad_request", message)
            }
            ServiceError::UnknownConversation(_) | ServiceError::UnknownMessage(_) | ServiceError::UnknownTrace(_) => {
                error_body(StatusCode::NOT_FOUND, "not_found", message)
            }
            ServiceError::Unparseable { trace_id, .. } => {
                let body = json!({
                    "error": "unparseable",
                    "message": message,
                    "nearest": e.hints(),
                    "trace_id": trace_id,
                });
                (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
            }
            ServiceError::Engine(EngineError::Plan(_)) => {
                error_body(StatusCode::UNPROCESSABLE_ENTITY, "unplannable", message)
            }
            ServiceError::Engine(EngineError::Synth(_)) => {
                error_body(StatusCode::SERVICE_UNAVAILABLE, "no_results", message)
            }
            _ => {
                tracing::error!(error = %message, "request failed");
                error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

fn bad_json(rejection: JsonRejection) -> Response {
    error_body(StatusCode::BAD_REQUEST, "bad_request", rejection.body_text())
}

type Shared = Arc<Service>;

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(service: Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(r) => r.map_err(ApiError),
        Err(join) => Err(ApiError(ServiceError::State { path: "<task>".into(), message: join.to_string() })),
    }
}

async fn create_conversation(State(s): State<Shared>) -> Result<Response, ApiError> {
    let id = blocking(s, |s| s.create_conversation()).await?;
    Ok((StatusCode::CREATED, Json(Created { conversation_id: id })).into_response())
}

async fn post_message(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return Ok(bad_json(r)),
    };
    let response = blocking(s, move |s| s.post_message(&id, &req.text)).await?;
    Ok(Json(response).into_response())
}

async fn post_feedback(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return Ok(bad_json(r)),
    };
    let record = blocking(s, move |s| s.post_feedback(&id, req.rating, req.comment)).await?;
    Ok(Json(record).into_response())
}

async fn get_trace(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let trace = blocking(s, move |s| s.trace(&id)).await?;
    Ok(Json(trace).into_response())
}

async fn bench_report(State(s): State<Shared>) -> Result<Response, ApiError> {
    let report = blocking(s, |s| s.bench_report()).await?;
    Ok(Json(report).into_response())
}

async fn eval_queue(State(s): State<Shared>) -> Result<Response, ApiError> {
    let queue = blocking(s, |s| Ok(s.eval_queue())).await?;
    Ok(Json(queue).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/v1/conversations", post(create_conversation))
        .route("/v1/conversations/{id}/messages", post(post_message))
        .route("/v1/messages/{id}/feedback", post(post_feedback))
        .route("/v1/traces/{id}", get(get_trace))
        .route("/v1/bench/report", get(bench_report))
        .route("/v1/eval/queue", get(eval_queue))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Shared, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
