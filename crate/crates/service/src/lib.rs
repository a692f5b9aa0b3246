//! HTTP service over an immutable model bundle.
//!
//! * `GET /meta` returns dimensions, joint names and per-component standard
//!   deviations.
//! * `POST /eval` evaluates the full pipeline; `?format=binary` returns the
//!   little-endian encoding of [`bipar_core::bundle::encode_binary`].
//! * `POST /fit` runs the parameter fitter on a bounded worker pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bipar_core::api::{ErrorBody, EvalRequest, FitRequest};
use bipar_core::bundle::{self, BundleMeta, EvalPayload, ModelBundle};
use bipar_core::Error;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub const DEFAULT_FIT_WORKERS: usize = 2;
const BODY_LIMIT: usize = 64 << 20;

#[derive(Clone)]
pub struct AppState {
    bundle: Arc<ModelBundle>,
    fit_slots: Arc<Semaphore>,
}

impl AppState {
    pub fn new(bundle: Arc<ModelBundle>, fit_workers: usize) -> Self {
        Self {
            bundle,
            fit_slots: Arc::new(Semaphore::new(fit_workers.max(1))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/eval", post(eval))
        .route("/fit", post(fit))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// An error rendered as `{error, kind}` JSON.
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: msg.into(),
                kind: "bad_request".into(),
                last_good: None,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Diverged { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } | Error::Image(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            body: ErrorBody::from(&e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: ErrorBody {
            error: format!("worker failed: {e}"),
            kind: "internal".into(),
            last_good: None,
        },
    })?
    .map_err(ApiError::from)
}

async fn meta(State(state): State<AppState>) -> Json<BundleMeta> {
    Json(state.bundle.meta())
}

#[derive(Debug, Default, Deserialize)]
struct EvalQuery {
    format: Option<String>,
}

async fn eval(State(state): State<AppState>, Query(q): Query<EvalQuery>, body: Bytes) -> Result<Response, ApiError> {
    let binary = match q.format.as_deref() {
        None | Some("json") => false,
        Some("binary") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    };
    let req: EvalRequest = if body.is_empty() { EvalRequest::default() } else { parse(&body)? };
    let bundle = state.bundle.clone();
    let evaluated = blocking(move || {
        let (b, t, x) = req.resolve(&bundle)?;
        bundle.eval(&b, &t, &x)
    })
    .await?;
    Ok(if binary {
        (
            [(header::CONTENT_TYPE, "application/octet-stream")],
            bundle::encode_binary(&evaluated),
        )
            .into_response()
    } else {
        Json(EvalPayload::from_evaluated(&evaluated)).into_response()
    })
}

async fn fit(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: FitRequest = parse(&body)?;
    let _permit = state
        .fit_slots
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::bad_request("service is shutting down"))?;
    let bundle = state.bundle.clone();
    let result = blocking(move || req.run(&bundle)).await?;
    Ok(Json(result).into_response())
}
