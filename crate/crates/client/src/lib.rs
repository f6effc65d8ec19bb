//! Typed HTTP client for the grasp engine service.

use grip_service::api::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use grip_service::api;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    /// The service-side error, when the request reached the service.
    pub fn api_error(&self) -> Option<&ApiError> {
        match self {
            ClientError::Api { error, .. } => Some(error),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize>(&self, path: &str, body: &B) -> Result<reqwest::Response, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        check(resp).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Ok(self.send(path, body).await?.json().await?)
    }

    /// Reads a JSON-lines response, passing progress events to `on_event`
    /// and returning the final result.
    async fn post_stream<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        mut on_event: impl FnMut(&Event<T>),
    ) -> Result<T, ClientError> {
        let mut resp = self.send(path, body).await?;
        let mut buf = Vec::new();
        while let Some(chunk) = resp.chunk().await? {
            buf.extend_from_slice(&chunk);
            while let Some(end) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=end).collect();
                let event: Event<T> =
                    serde_json::from_slice(&line).map_err(|e| ClientError::Protocol(format!("bad event line: {e}")))?;
                match event {
                    Event::Done(v) => return Ok(v),
                    Event::Error(error) => return Err(ClientError::Api { status: 200, error }),
                    other => on_event(&other),
                }
            }
        }
        Err(ClientError::Protocol("stream ended without a result".into()))
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Ok(check(resp).await?.json().await?)
    }

    pub async fn synth(&self, req: &SynthRequest) -> Result<SynthResponse, ClientError> {
        self.post("/synth", req).await
    }

    pub async fn validate(
        &self,
        req: &ValidateRequest,
        on_event: impl FnMut(&Event<ValidateResponse>),
    ) -> Result<ValidateResponse, ClientError> {
        self.post_stream("/validate", req, on_event).await
    }

    pub async fn bench(
        &self,
        req: &BenchRequest,
        on_event: impl FnMut(&Event<BenchResponse>),
    ) -> Result<BenchResponse, ClientError> {
        self.post_stream("/bench", req, on_event).await
    }

    pub async fn metrics(&self, req: &DatasetRequest) -> Result<MetricsResponse, ClientError> {
        self.post("/metrics", req).await
    }

    pub async fn report(&self, req: &DatasetRequest) -> Result<ReportResponse, ClientError> {
        self.post("/report", req).await
    }
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await?;
    let error = serde_json::from_str(&text).unwrap_or(ApiError {
        kind: ErrorKind::Internal,
        message: text,
    });
    Err(ClientError::Api {
        status: status.as_u16(),
        error,
    })
}
