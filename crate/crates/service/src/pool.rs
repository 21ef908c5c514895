// SPDX-License-Identifier: Apache-2.0

//! The task pool: examples awaiting ratings, with the metadata that must
//! stay on the server.

use std::collections::HashSet;
use std::io::BufRead;

use huse_core::Origin;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// One pool line. `origin` and `log_p_model` are never sent to raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub example_id: String,
    #[serde(default)]
    pub context: String,
    pub output_text: String,
    pub origin: Origin,
    pub log_p_model: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

/// Reads a JSONL pool, rejecting duplicate ids and non-finite
/// log-probabilities.
pub fn load_pool<R: BufRead>(source: R) -> ServiceResult<Vec<PoolItem>> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ServiceError::Pool {
            line: i + 1,
            message,
        };
        let item: PoolItem = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if !item.log_p_model.is_finite() {
            return Err(bad(format!(
                "log_p_model {} is not finite",
                item.log_p_model
            )));
        }
        if !seen.insert(item.example_id.clone()) {
            return Err(bad(format!("duplicate example_id {:?}", item.example_id)));
        }
        items.push(item);
    }
    Ok(items)
}
