//! JSON endpoints over the annotation queue.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use weaksift_core::service::{AnnotationService, SubmissionRequest};
use weaksift_core::Error;

pub const TOKEN_HEADER: &str = "x-annotation-token";

#[derive(Clone)]
struct AppState {
    service: Arc<AnnotationService>,
    default_limit: usize,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NoBatch(_) => return ApiError(StatusCode::CONFLICT, "no active batch".into()),
            Error::Advancing => StatusCode::SERVICE_UNAVAILABLE,
            Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            Error::UnknownDocument(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult = Result<Response, ApiError>;

/// Runs a store operation off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> weaksift_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn queue(State(state): State<AppState>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let limit = match params.get("limit") {
        None => state.default_limit,
        Some(raw) => raw
            .parse::<usize>()
            .map_err(|_| ApiError(StatusCode::BAD_REQUEST, format!("invalid limit {raw:?}")))?,
    };
    let service = state.service.clone();
    let items = blocking(move || service.queue(limit)).await?;
    Ok(Json(items).into_response())
}

async fn labels(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let request: SubmissionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let service = state.service.clone();
    let acks = blocking(move || service.submit(&request.labels)).await?;
    Ok(Json(json!({ "results": acks })).into_response())
}

async fn status(State(state): State<AppState>) -> ApiResult {
    let service = state.service.clone();
    Ok(Json(blocking(move || service.status()).await?).into_response())
}

async fn document(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let service = state.service.clone();
    Ok(Json(blocking(move || service.document(&id)).await?).into_response())
}

async fn require_token(State(token): State<Arc<String>>, req: Request, next: Next) -> Response {
    let supplied = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
    if supplied == Some(token.as_str()) {
        next.run(req).await
    } else {
        ApiError(StatusCode::UNAUTHORIZED, "missing or wrong annotation token".into()).into_response()
    }
}

pub fn router(service: AnnotationService) -> Router {
    let config = &service.pipeline().config;
    let token = config.service.token.clone();
    let state = AppState {
        default_limit: config.batch_size,
        service: Arc::new(service),
    };
    let app = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/labels", post(labels))
        .route("/api/status", get(status))
        .route("/api/doc/{id}", get(document))
        .with_state(state);
    match token {
        Some(t) => app.layer(middleware::from_fn_with_state(Arc::new(t), require_token)),
        None => app,
    }
}

pub async fn serve(service: AnnotationService, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
