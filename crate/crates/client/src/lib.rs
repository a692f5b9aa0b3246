//! Async client for the bipar HTTP service.

use bipar_core::api::{ErrorBody, EvalRequest, FitRequest};
use bipar_core::bundle::{self, BinaryEval, BundleMeta, EvalPayload};
use bipar_core::fit::FitResult;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {}", body.error)]
    Api { status: u16, body: ErrorBody },
    #[error("bad response: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base_url` such as `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base_url.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn meta(&self) -> Result<BundleMeta> {
        let res = self.http.get(format!("{}/meta", self.base)).send().await?;
        decode_json(res).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalPayload> {
        decode_json(self.post("/eval", req).await?).await
    }

    pub async fn eval_binary(&self, req: &EvalRequest) -> Result<BinaryEval> {
        let res = check(self.post("/eval?format=binary", req).await?).await?;
        let bytes = res.bytes().await?;
        bundle::decode_binary(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn fit(&self, req: &FitRequest) -> Result<FitResult> {
        decode_json(self.post("/fit", req).await?).await
    }

    async fn post(&self, path: &str, body: &impl Serialize) -> Result<reqwest::Response> {
        Ok(self.http.post(format!("{}{path}", self.base)).json(body).send().await?)
    }
}

async fn check(res: reqwest::Response) -> Result<reqwest::Response> {
    let status = res.status();
    if status.is_success() {
        return Ok(res);
    }
    let text = res.text().await?;
    let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
        error: text,
        kind: "http".into(),
        last_good: None,
    });
    Err(ClientError::Api {
        status: status.as_u16(),
        body,
    })
}

async fn decode_json<T: DeserializeOwned>(res: reqwest::Response) -> Result<T> {
    let bytes = check(res).await?.bytes().await?;
    serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
}
