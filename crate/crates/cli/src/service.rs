//! HTTP explanation service.
//!
//! | method | path | body | response |
//! |--------|------|------|----------|
//! | GET | `/health` | | [`Health`] |
//! | GET | `/model` | | [`ModelInfo`](crate::engine::ModelInfo) |
//! | GET | `/rules` | | [`RuleSetDocument`] |
//! | POST | `/infer` | [`InferRequest`] | [`ExplanationPayload`](crate::engine::ExplanationPayload) |
//! | POST | `/counterfactual` | [`CounterfactualRequest`] | [`CounterfactualResponse`] |
//! | POST | `/whatif` | [`WhatIfRequest`] | [`WhatIfResponse`](crate::engine::WhatIfResponse) |
//!
//! Failures return [`ApiError`] bodies: 400 for malformed bodies (with the
//! JSON path of the offending field), 422 when the input does not fit the
//! model vocabulary. A counterfactual search that exceeds its time budget
//! answers 504 with the greedy result and `complete: false`.
//!
//! Handlers share one immutable [`Engine`]; searches run on the blocking
//! thread pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use factlogic::RuleSetDocument;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{
    CounterfactualRequest, CounterfactualResponse, Engine, ErrorKind, InferRequest, Mode, RequestError,
    WhatIfRequest,
};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub mode: Mode,
    pub facts: usize,
    pub classes: usize,
    pub rules: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: RequestError,
}

impl From<RequestError> for ApiError {
    fn from(error: RequestError) -> Self {
        let status = match error.kind {
            ErrorKind::MalformedBody => StatusCode::BAD_REQUEST,
            ErrorKind::VocabularyMismatch => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, error }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// Decodes a JSON body, reporting the path of the first bad field.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, RequestError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        RequestError::malformed(if path == "." { "body".to_string() } else { path }, e.inner().to_string())
    })
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/rules", get(rules))
        .route("/infer", post(infer))
        .route("/counterfactual", post(counterfactual))
        .route("/whatif", post(whatif))
        .with_state(engine)
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    let info = engine.info();
    Json(Health {
        status: "ok".into(),
        mode: info.mode,
        facts: info.facts.len(),
        classes: info.classes.len(),
        rules: info.rules,
    })
}

async fn model(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.info()).into_response()
}

async fn rules(State(engine): State<Arc<Engine>>) -> Json<RuleSetDocument> {
    Json(engine.rules_document().clone())
}

/// Runs `f` on the blocking pool.
async fn blocking<T: Send + 'static>(
    engine: Arc<Engine>,
    f: impl FnOnce(&Engine) -> Result<T, RequestError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| {
            ApiError::from(RequestError {
                kind: ErrorKind::Internal,
                field: None,
                message: format!("worker failed: {e}"),
            })
        })?
        .map_err(ApiError::from)
}

async fn infer(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ApiError> {
    let req: InferRequest = parse_body(&body)?;
    let payload = blocking(engine, move |e| e.explain(&req)).await?;
    Ok(Json(payload).into_response())
}

async fn counterfactual(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CounterfactualRequest = parse_body(&body)?;
    let response: CounterfactualResponse = blocking(engine, move |e| e.counterfactual(&req)).await?;
    let status = if response.complete {
        StatusCode::OK
    } else {
        StatusCode::GATEWAY_TIMEOUT
    };
    Ok((status, Json(response)).into_response())
}

async fn whatif(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ApiError> {
    let req: WhatIfRequest = parse_body(&body)?;
    let response = blocking(engine, move |e| e.whatif(&req)).await?;
    Ok(Json(response).into_response())
}

/// Serves until interrupted. `on_bind` receives the bound address (useful
/// with port 0).
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr, on_bind: impl FnOnce(SocketAddr)) -> CliResult<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Service(format!("cannot bind {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::Service(e.to_string()))?;
    on_bind(local);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            // without a signal handler the server simply runs until killed
            if tokio::signal::ctrl_c().await.is_err() {
                std::future::pending::<()>().await;
            }
        })
        .await
        .map_err(|e| CliError::Service(e.to_string()))
}
