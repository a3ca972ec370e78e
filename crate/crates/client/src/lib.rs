//! Typed client for the mvcont HTTP service.

use std::time::Duration;

use mvcont_core::api::{
    ConfigRequest, ErrorBody, EvalRequest, Health, JobAccepted, JobStatus, ReportRequest, ReportResponse,
    ResolvedConfig, SweepRequest,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
    #[error("job {id} failed: {message}")]
    JobFailed { id: String, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn resolve(&self, request: &ConfigRequest) -> Result<ResolvedConfig> {
        self.post("/v1/config/resolve", request).await
    }

    pub async fn submit_run(&self, request: &ConfigRequest) -> Result<JobAccepted> {
        self.post("/v1/runs", request).await
    }

    pub async fn submit_sweep(&self, request: &SweepRequest) -> Result<JobAccepted> {
        self.post("/v1/sweeps", request).await
    }

    pub async fn submit_eval(&self, request: &EvalRequest) -> Result<JobAccepted> {
        self.post("/v1/eval", request).await
    }

    pub async fn report(&self, request: &ReportRequest) -> Result<ReportResponse> {
        self.post("/v1/report", request).await
    }

    pub async fn job(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/jobs/{id}")).await
    }

    pub async fn jobs(&self) -> Result<Vec<JobStatus>> {
        self.get("/v1/jobs").await
    }

    /// Polls until the job finishes. `on_update` sees every poll. A failed
    /// job becomes `ClientError::JobFailed`.
    pub async fn wait(
        &self,
        id: &str,
        interval: Duration,
        mut on_update: impl FnMut(&JobStatus),
    ) -> Result<JobStatus> {
        loop {
            let status = self.job(id).await?;
            on_update(&status);
            if status.state.is_terminal() {
                return match status.error {
                    Some(message) => Err(ClientError::JobFailed {
                        id: id.to_string(),
                        message,
                    }),
                    None => Ok(status),
                };
            }
            tokio::time::sleep(interval).await;
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let response = self.http.get(&url).send().await;
        decode(url, response).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let response = self.http.post(&url).json(body).send().await;
        decode(url, response).await
    }
}

async fn decode<T: DeserializeOwned>(url: String, response: reqwest::Result<reqwest::Response>) -> Result<T> {
    let transport = |source| ClientError::Transport { url: url.clone(), source };
    let response = response.map_err(transport)?;
    let status = response.status();
    if status.is_success() {
        return response.json().await.map_err(transport);
    }
    let text = response.text().await.map_err(transport)?;
    let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
    Err(ClientError::Api {
        status: status.as_u16(),
        message,
    })
}
