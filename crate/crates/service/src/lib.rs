// SPDX-License-Identifier: Apache-2.0

//! Rating collection over HTTP.
//!
//! Raters fetch batches of tasks, submit 0-5 typicality scores, and the
//! accumulated ratings are exported in the JSONL schema read by
//! `huse_core::load_dataset`.
//!
//! | method | path                  | body / query                         |
//! |--------|-----------------------|--------------------------------------|
//! | GET    | `/api/tasks/next`     | `?rater_id=...`; 204 when exhausted  |
//! | POST   | `/api/ratings`        | `{rater_id, example_id, score}`      |
//! | GET    | `/api/export`         | JSONL                                |
//! | GET    | `/api/progress`       |                                      |
//! | GET    | `/api/instructions`   |                                      |

mod error;
mod pool;
mod store;

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use error::{ApiError, ServiceError, ServiceResult};
pub use pool::{load_pool, PoolItem};
pub use store::{
    Ack, AnnotationTask, ExampleCount, Progress, Store, StoreConfig, StoredRating, TaskBatch,
    INSTRUCTIONS_VERSION,
};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// JSONL pool; without one the service answers 503 to task and rating
    /// requests.
    pub pool: Option<PathBuf>,
    /// Append-only rating log, created when missing.
    pub log: PathBuf,
    pub store: StoreConfig,
    /// Directory of static files served at `/` (the rating UI).
    pub static_dir: Option<PathBuf>,
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

pub fn instructions() -> Instructions {
    let labels = [
        "invalid: ungrammatical or factually wrong",
        "very atypical",
        "atypical",
        "somewhat typical",
        "typical",
        "very typical",
    ];
    Instructions {
        version: INSTRUCTIONS_VERSION.to_string(),
        text: "Rate how typical the response is for the given context, from 0 to 5. \
               Use 0 when the response is invalid (grammatically or factually incorrect) \
               and 5 when it is very typical. Treat <UNK> tokens as rare but appropriate \
               words for the context."
            .to_string(),
        scale: labels
            .iter()
            .enumerate()
            .map(|(score, label)| ScaleLabel {
                score: score as u8,
                label: label.to_string(),
            })
            .collect(),
    }
}

type Shared = Arc<Mutex<Store>>;

fn lock(store: &Shared) -> MutexGuard<'_, Store> {
    // a panic while holding the lock cannot leave a half-applied rating:
    // the index is only touched after the log write succeeded
    store.lock().unwrap_or_else(|e| e.into_inner())
}

/// Opens the pool and log and builds the router.
pub fn app(config: &ServiceConfig) -> ServiceResult<Router> {
    let store = match &config.pool {
        Some(path) => {
            let items = load_pool(BufReader::new(File::open(path)?))?;
            Store::open(items, &config.log, config.store)?
        }
        None => Store::empty(config.store),
    };
    Ok(router(
        Arc::new(Mutex::new(store)),
        config.static_dir.clone(),
    ))
}

fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_batch))
        .route("/api/ratings", post(submit))
        .route("/api/export", get(export))
        .route("/api/progress", get(progress))
        .route("/api/instructions", get(|| async { Json(instructions()) }))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

async fn next_batch(
    State(store): State<Shared>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let rater_id = query
        .get("rater_id")
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| ApiError::Invalid("rater_id query parameter is required".into()))?;
    Ok(match lock(&store).next_batch(rater_id)? {
        Some(batch) => Json(batch).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct Submission {
    rater_id: String,
    example_id: String,
    score: Value,
}

fn parse_score(value: &Value) -> Result<u8, ApiError> {
    let integral = match value {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        _ => None,
    };
    match integral {
        Some(s @ 0..=5) => Ok(s as u8),
        _ => Err(ApiError::Invalid(format!(
            "score must be an integer from 0 to 5, got {value}"
        ))),
    }
}

async fn submit(
    State(store): State<Shared>,
    Json(body): Json<Submission>,
) -> Result<Json<Ack>, ApiError> {
    let score = parse_score(&body.score)?;
    // the log write syncs to disk; keep it off the async workers
    tokio::task::spawn_blocking(move || {
        lock(&store).submit(&body.rater_id, &body.example_id, score)
    })
    .await
    .map_err(|e| ApiError::Storage(e.to_string()))?
    .map(Json)
}

async fn export(State(store): State<Shared>) -> Response {
    let body = lock(&store).export();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn progress(State(store): State<Shared>) -> Json<Progress> {
    Json(lock(&store).progress())
}
