use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::annotate::{annotate, AnnotateRequest};
use super::artifact::{load_model, ModelArtifact};
use super::ServingError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_hash: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

fn error(status: StatusCode, code: &str, message: String) -> Response {
    (
        status,
        Json(ErrorBody {
            code: code.to_string(),
            message,
        }),
    )
        .into_response()
}

impl IntoResponse for ServingError {
    fn into_response(self) -> Response {
        match self.validation_code() {
            Some(code) => error(StatusCode::BAD_REQUEST, code, self.to_string()),
            None => {
                log::error!("annotate failed: {self}");
                error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error".into())
            }
        }
    }
}

async fn health(State(artifact): State<Arc<ModelArtifact>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_hash: artifact.header.content_hash.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn annotate_handler(
    State(artifact): State<Arc<ModelArtifact>>,
    body: Result<Json<AnnotateRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "schema", e.body_text()),
    };
    match tokio::task::spawn_blocking(move || annotate(&artifact, &req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(join) => {
            log::error!("annotate task failed: {join}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error".into())
        }
    }
}

/// Routes over one shared, read-only model snapshot.
pub fn router(artifact: Arc<ModelArtifact>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/annotate", post(annotate_handler))
        .with_state(artifact)
}

/// Loads the model and serves until the process is stopped.
pub async fn serve(model_path: &Path, bind: SocketAddr) -> Result<(), ServingError> {
    let artifact = Arc::new(load_model(model_path)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!(
        "serving model {} on {}",
        artifact.header.content_hash,
        listener.local_addr()?
    );
    axum::serve(listener, router(artifact)).await?;
    Ok(())
}
