// SPDX-License-Identifier: Apache-2.0

//! Thin async client for the rating service.

use huse_core::dataset::{load_dataset, EvalDataset, Format};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service answered {status}: {message}")]
    Status { status: StatusCode, message: String },
    #[error("export is not a valid dataset: {0}")]
    Dataset(#[from] huse_core::Error),
}

impl ClientError {
    /// The HTTP status of a rejected request.
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
            ClientError::Dataset(_) => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub example_id: String,
    pub context: String,
    pub output_text: String,
    pub instructions_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub batch_id: String,
    pub rater_id: String,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub example_id: String,
    pub rater_id: String,
    pub example_ratings: usize,
    pub ratings_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleCount {
    pub example_id: String,
    pub ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub examples_total: usize,
    pub fully_rated: usize,
    pub ratings_total: usize,
    pub replicate_target: usize,
    pub per_example: Vec<ExampleCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLabel {
    pub score: u8,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instructions {
    pub version: String,
    pub text: String,
    pub scale: Vec<ScaleLabel>,
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn checked(response: reqwest::Response) -> Result<reqwest::Response> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body = response.text().await.unwrap_or_default();
        let message = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v.get("error")?.as_str().map(String::from))
            .unwrap_or(body);
        Err(ClientError::Status { status, message })
    }

    /// Next batch for `rater_id`, or `None` once the rater has seen the
    /// whole pool.
    pub async fn next_batch(&self, rater_id: &str) -> Result<Option<TaskBatch>> {
        let response = self
            .http
            .get(self.url("/api/tasks/next"))
            .query(&[("rater_id", rater_id)])
            .send()
            .await?;
        let response = Self::checked(response).await?;
        if response.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        Ok(Some(response.json().await?))
    }

    pub async fn submit_rating(&self, rater_id: &str, example_id: &str, score: u8) -> Result<Ack> {
        self.submit_raw(json!({ "rater_id": rater_id, "example_id": example_id, "score": score }))
            .await
    }

    /// Posts an arbitrary body to the rating endpoint.
    pub async fn submit_raw(&self, body: Value) -> Result<Ack> {
        let response = self
            .http
            .post(self.url("/api/ratings"))
            .json(&body)
            .send()
            .await?;
        Ok(Self::checked(response).await?.json().await?)
    }

    /// Raw JSONL export.
    pub async fn export(&self) -> Result<String> {
        let response = self.http.get(self.url("/api/export")).send().await?;
        Ok(Self::checked(response).await?.text().await?)
    }

    /// Export parsed as a dataset; fails while any example lacks ratings.
    pub async fn export_dataset(&self) -> Result<EvalDataset> {
        let body = self.export().await?;
        Ok(load_dataset(body.as_bytes(), Format::Jsonl)?)
    }

    pub async fn progress(&self) -> Result<Progress> {
        let response = self.http.get(self.url("/api/progress")).send().await?;
        Ok(Self::checked(response).await?.json().await?)
    }

    pub async fn instructions(&self) -> Result<Instructions> {
        let response = self.http.get(self.url("/api/instructions")).send().await?;
        Ok(Self::checked(response).await?.json().await?)
    }
}
