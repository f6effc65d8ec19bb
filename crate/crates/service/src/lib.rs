//! HTTP service running grasp synthesis, validation trials, benchmarks and
//! dataset reports. Long-running endpoints stream JSON lines.

pub mod api;
pub mod work;

use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use api::*;

pub const NDJSON: &str = "application/x-ndjson";

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::Config => StatusCode::BAD_REQUEST,
            ErrorKind::Format | ErrorKind::Scene => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self)).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| work::config_error(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError {
            kind: ErrorKind::Internal,
            message: format!("worker stopped: {e}"),
        })
    })
}

/// Runs `job` on the blocking pool and streams its events, ending with
/// `done` or `error`.
fn stream<T, F>(job: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&mut dyn FnMut(Event<T>)) -> Result<T, ApiError> + Send + 'static,
{
    let (tx, rx) = mpsc::channel::<String>(256);
    tokio::task::spawn_blocking(move || {
        let send = |e: Event<T>| {
            let mut line = serde_json::to_string(&e).expect("events serialize");
            line.push('\n');
            // A disconnected client does not stop the work.
            let _ = tx.blocking_send(line);
        };
        let mut emit = |e: Event<T>| send(e);
        let last = match job(&mut emit) {
            Ok(v) => Event::Done(v),
            Err(e) => {
                tracing::warn!(error = %e, "streamed job failed");
                Event::Error(e)
            }
        };
        send(last);
    });
    let lines = futures_util::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|line| (Ok::<_, Infallible>(line), rx))
    });
    ([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(lines)).into_response()
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn synth(payload: Result<Json<SynthRequest>, JsonRejection>) -> Result<Json<SynthResponse>, ApiError> {
    let req = body(payload)?;
    blocking(move || work::synth(&req)).await.map(Json)
}

async fn validate(payload: Result<Json<ValidateRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let req = body(payload)?;
    req.config.validate()?;
    Ok(stream(move |emit| work::validate(&req, emit)))
}

async fn bench(payload: Result<Json<BenchRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let req = body(payload)?;
    work::check_bench(&req)?;
    Ok(stream(move |emit| work::bench(&req, emit)))
}

async fn metrics(payload: Result<Json<DatasetRequest>, JsonRejection>) -> Result<Json<MetricsResponse>, ApiError> {
    let req = body(payload)?;
    blocking(move || work::metrics(&req)).await.map(Json)
}

async fn report(payload: Result<Json<DatasetRequest>, JsonRejection>) -> Result<Json<ReportResponse>, ApiError> {
    let req = body(payload)?;
    blocking(move || work::report(&req)).await.map(Json)
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/synth", post(synth))
        .route("/validate", post(validate))
        .route("/bench", post(bench))
        .route("/metrics", post(metrics))
        .route("/report", post(report))
}

pub async fn serve(listener: TcpListener) -> io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "service listening");
    Ok((local, tokio::spawn(serve(listener))))
}
