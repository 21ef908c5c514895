// SPDX-License-Identifier: Apache-2.0

//! In-memory rating index backed by an append-only JSONL log.
//!
//! Every accepted rating is written and synced to the log before it is
//! acknowledged. On startup the log is replayed; a final line cut short by a
//! crash is dropped and truncated away, any other malformed line is an error.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use huse_core::dataset::RatingRecord;
use huse_core::Origin;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ServiceError, ServiceResult};
use crate::pool::PoolItem;

/// Version tag of the rating instructions shown with every task.
pub const INSTRUCTIONS_VERSION: &str = "typicality-0-5-v1";

/// One line of the rating log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub example_id: String,
    pub rater_id: String,
    pub score: u8,
    pub submitted_at: DateTime<Utc>,
    #[serde(default)]
    pub batch_id: Option<String>,
}

impl StoredRating {
    pub fn record(&self) -> RatingRecord {
        RatingRecord {
            example_id: self.example_id.clone(),
            rater_id: self.rater_id.clone(),
            score: f64::from(self.score),
            submitted_at: self.submitted_at,
        }
    }
}

/// What a rater sees: no origin, no model probability.
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

/// Export line: the dataset ingestion schema plus a readiness flag.
#[derive(Debug, Serialize)]
struct ExportRecord<'a> {
    example_id: &'a str,
    context: &'a str,
    output_text: &'a str,
    origin: Origin,
    log_p_model: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_count: Option<usize>,
    ratings: Vec<u8>,
    rater_ids: Vec<&'a str>,
    ready: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreConfig {
    pub replicate_target: usize,
    pub batch_size: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            replicate_target: 20,
            batch_size: 25,
        }
    }
}

pub struct Store {
    config: StoreConfig,
    items: Vec<PoolItem>,
    index: HashMap<String, usize>,
    ratings: Vec<Vec<StoredRating>>,
    /// Per rater: pool indices already rated.
    rated: HashMap<String, HashSet<usize>>,
    /// Per rater: pool index to the batch it was issued in. Not persisted,
    /// so a restart may reissue unrated tasks.
    issued: HashMap<String, HashMap<usize, String>>,
    total: usize,
    batches: u64,
    log: Option<File>,
}

impl Store {
    /// A store with no pool; task and rating requests are refused.
    pub fn empty(config: StoreConfig) -> Self {
        Store {
            config,
            items: Vec::new(),
            index: HashMap::new(),
            ratings: Vec::new(),
            rated: HashMap::new(),
            issued: HashMap::new(),
            total: 0,
            batches: 0,
            log: None,
        }
    }

    /// Opens (or creates) the log at `log_path` and replays it against `items`.
    pub fn open(items: Vec<PoolItem>, log_path: &Path, config: StoreConfig) -> ServiceResult<Self> {
        let mut store = Store::empty(config);
        store.index = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.example_id.clone(), i))
            .collect();
        store.ratings = vec![Vec::new(); items.len()];
        store.items = items;

        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(log_path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut offset = 0;
        let mut line_no = 0;
        while offset < bytes.len() {
            line_no += 1;
            let rest = &bytes[offset..];
            let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
                Some(end) => (&rest[..end], true),
                None => (rest, false),
            };
            let parsed = serde_json::from_slice::<StoredRating>(line);
            match (parsed, complete) {
                (Ok(rating), _) => {
                    store.apply(rating).map_err(|e| ServiceError::Log {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    if !complete {
                        file.write_all(b"\n")?;
                        file.sync_data()?;
                    }
                }
                (Err(_), true) if line.iter().all(u8::is_ascii_whitespace) => {}
                (Err(e), true) => {
                    return Err(ServiceError::Log {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
                (Err(_), false) => {
                    tracing::warn!(line = line_no, "dropping truncated final log line");
                    file.set_len(offset as u64)?;
                    file.seek(SeekFrom::End(0))?;
                    file.sync_data()?;
                }
            }
            offset += line.len() + 1;
        }
        store.log = Some(file);
        Ok(store)
    }

    pub fn has_pool(&self) -> bool {
        self.log.is_some()
    }

    fn require_pool(&self) -> Result<(), ApiError> {
        if self.has_pool() {
            Ok(())
        } else {
            Err(ApiError::NoPool)
        }
    }

    fn check(&self, rating: &StoredRating) -> Result<usize, ApiError> {
        let &i = self
            .index
            .get(&rating.example_id)
            .ok_or_else(|| ApiError::UnknownExample(rating.example_id.clone()))?;
        if rating.score > 5 {
            return Err(ApiError::Invalid(format!(
                "score {} is outside 0-5",
                rating.score
            )));
        }
        if self
            .rated
            .get(&rating.rater_id)
            .is_some_and(|done| done.contains(&i))
        {
            return Err(ApiError::Duplicate {
                rater_id: rating.rater_id.clone(),
                example_id: rating.example_id.clone(),
            });
        }
        Ok(i)
    }

    fn apply(&mut self, rating: StoredRating) -> Result<usize, ApiError> {
        let i = self.check(&rating)?;
        self.rated
            .entry(rating.rater_id.clone())
            .or_default()
            .insert(i);
        self.ratings[i].push(rating);
        self.total += 1;
        Ok(i)
    }

    /// Up to `batch_size` examples the rater has neither rated nor been
    /// issued, fewest ratings first (pool order breaks ties).
    pub fn next_batch(&mut self, rater_id: &str) -> Result<Option<TaskBatch>, ApiError> {
        self.require_pool()?;
        let done = self.rated.get(rater_id);
        let issued = self.issued.get(rater_id);
        let mut open: Vec<usize> = (0..self.items.len())
            .filter(|i| !done.is_some_and(|d| d.contains(i)))
            .filter(|i| !issued.is_some_and(|s| s.contains_key(i)))
            .collect();
        if open.is_empty() {
            return Ok(None);
        }
        open.sort_by_key(|&i| (self.ratings[i].len(), i));
        open.truncate(self.config.batch_size);

        self.batches += 1;
        let batch_id = format!("b{}-{}", Utc::now().timestamp_millis(), self.batches);
        let issued = self.issued.entry(rater_id.to_string()).or_default();
        let tasks = open
            .into_iter()
            .map(|i| {
                issued.insert(i, batch_id.clone());
                let item = &self.items[i];
                AnnotationTask {
                    example_id: item.example_id.clone(),
                    context: item.context.clone(),
                    output_text: item.output_text.clone(),
                    instructions_version: INSTRUCTIONS_VERSION.to_string(),
                }
            })
            .collect();
        Ok(Some(TaskBatch {
            batch_id,
            rater_id: rater_id.to_string(),
            tasks,
        }))
    }

    /// Validates, durably logs, then indexes one rating.
    pub fn submit(&mut self, rater_id: &str, example_id: &str, score: u8) -> Result<Ack, ApiError> {
        self.require_pool()?;
        if rater_id.trim().is_empty() {
            return Err(ApiError::Invalid("rater_id is empty".into()));
        }
        let batch_id = self
            .index
            .get(example_id)
            .and_then(|i| self.issued.get(rater_id)?.get(i).cloned());
        let rating = StoredRating {
            example_id: example_id.to_string(),
            rater_id: rater_id.to_string(),
            score,
            submitted_at: Utc::now(),
            batch_id,
        };
        self.check(&rating)?;

        let mut line = serde_json::to_vec(&rating).map_err(|e| ApiError::Storage(e.to_string()))?;
        line.push(b'\n');
        let log = self.log.as_mut().ok_or(ApiError::NoPool)?;
        log.write_all(&line)
            .and_then(|()| log.sync_data())
            .map_err(|e| ApiError::Storage(e.to_string()))?;

        let i = self.apply(rating)?;
        Ok(Ack {
            example_id: example_id.to_string(),
            rater_id: rater_id.to_string(),
            example_ratings: self.ratings[i].len(),
            ratings_total: self.total,
        })
    }

    /// All ratings in log order.
    pub fn ratings(&self) -> impl Iterator<Item = &StoredRating> {
        self.ratings.iter().flatten()
    }

    /// JSONL in pool order, loadable once every example has ratings.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (item, ratings) in self.items.iter().zip(&self.ratings) {
            let record = ExportRecord {
                example_id: &item.example_id,
                context: &item.context,
                output_text: &item.output_text,
                origin: item.origin,
                log_p_model: item.log_p_model,
                token_count: item.token_count,
                ratings: ratings.iter().map(|r| r.score).collect(),
                rater_ids: ratings.iter().map(|r| r.rater_id.as_str()).collect(),
                ready: ratings.len() >= self.config.replicate_target,
            };
            out.push_str(&serde_json::to_string(&record).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn progress(&self) -> Progress {
        let per_example: Vec<ExampleCount> = self
            .items
            .iter()
            .zip(&self.ratings)
            .map(|(item, r)| ExampleCount {
                example_id: item.example_id.clone(),
                ratings: r.len(),
            })
            .collect();
        Progress {
            examples_total: self.items.len(),
            fully_rated: per_example
                .iter()
                .filter(|c| c.ratings >= self.config.replicate_target)
                .count(),
            ratings_total: self.total,
            replicate_target: self.config.replicate_target,
            per_example,
        }
    }
}
