// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::Path;

use huse_client::Client;
use huse_service::{app, ServiceConfig, StoreConfig};
use reqwest::StatusCode;
use serde_json::json;
use tempfile::TempDir;

fn write_pool(dir: &Path, contexts: usize) -> std::path::PathBuf {
    let path = dir.join("pool.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for c in 0..contexts {
        for (origin, lp) in [("reference", -12.5), ("model", -8.25)] {
            let line = json!({
                "example_id": format!("{c}-{origin}"),
                "context": format!("context {c}"),
                "output_text": format!("an <UNK> reply number {c}"),
                "origin": origin,
                "log_p_model": lp,
            });
            writeln!(f, "{line}").unwrap();
        }
    }
    path
}

async fn start(config: ServiceConfig) -> Client {
    let router = app(&config).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(huse_service::serve(listener, router));
    Client::new(format!("http://{addr}"))
}

fn config(dir: &TempDir, contexts: usize) -> ServiceConfig {
    ServiceConfig {
        pool: Some(write_pool(dir.path(), contexts)),
        log: dir.path().join("ratings.jsonl"),
        ..Default::default()
    }
}

fn code(e: huse_client::ClientError) -> StatusCode {
    e.status().expect("status error")
}

#[tokio::test]
async fn fresh_rater_gets_a_full_blind_batch() {
    let dir = TempDir::new().unwrap();
    let client = start(config(&dir, 100)).await;
    let batch = client.next_batch("r1").await.unwrap().unwrap();
    assert_eq!(batch.tasks.len(), 25);
    let ids: std::collections::HashSet<_> = batch.tasks.iter().map(|t| &t.example_id).collect();
    assert_eq!(ids.len(), 25);

    let raw = reqwest::get(format!("{}/api/tasks/next?rater_id=r2", client.base_url()))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(!raw.contains("origin"), "{raw}");
    assert!(!raw.contains("log_p_model"), "{raw}");
    assert!(raw.contains("<UNK>"));
}

#[tokio::test]
async fn exhausted_rater_gets_nothing() {
    let dir = TempDir::new().unwrap();
    let client = start(config(&dir, 20)).await;
    let mut seen = std::collections::HashSet::new();
    while let Some(batch) = client.next_batch("r1").await.unwrap() {
        for task in batch.tasks {
            assert!(
                seen.insert(task.example_id.clone()),
                "reissued {}",
                task.example_id
            );
            client
                .submit_rating("r1", &task.example_id, 3)
                .await
                .unwrap();
        }
    }
    assert_eq!(seen.len(), 40);
    assert!(client.next_batch("r1").await.unwrap().is_none());
}

#[tokio::test]
async fn least_rated_example_is_served_first() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(&dir, 20);
    cfg.store = StoreConfig {
        replicate_target: 2,
        batch_size: 25,
    };
    let client = start(cfg).await;
    let progress = client.progress().await.unwrap();
    let ids: Vec<String> = progress
        .per_example
        .iter()
        .map(|c| c.example_id.clone())
        .collect();
    for rater in ["a", "b"] {
        for id in &ids {
            if !(rater == "b" && id == "17-model") {
                client.submit_rating(rater, id, 4).await.unwrap();
            }
        }
    }
    let batch = client.next_batch("c").await.unwrap().unwrap();
    assert_eq!(batch.tasks[0].example_id, "17-model");
    let progress = client.progress().await.unwrap();
    assert_eq!(progress.fully_rated, progress.examples_total - 1);
}

#[tokio::test]
async fn submission_rules() {
    let dir = TempDir::new().unwrap();
    let client = start(config(&dir, 5)).await;
    assert_eq!(client.progress().await.unwrap().fully_rated, 0);

    let ack = client.submit_rating("r1", "0-model", 4).await.unwrap();
    assert_eq!(ack.ratings_total, 1);
    assert_eq!(client.progress().await.unwrap().ratings_total, 1);

    let dup = client.submit_rating("r1", "0-model", 2).await.unwrap_err();
    assert_eq!(code(dup), StatusCode::CONFLICT);
    let missing = client.submit_rating("r1", "nope", 2).await.unwrap_err();
    assert_eq!(code(missing), StatusCode::NOT_FOUND);
    let high = client.submit_rating("r1", "1-model", 6).await.unwrap_err();
    assert_eq!(code(high), StatusCode::UNPROCESSABLE_ENTITY);
    let frac = client
        .submit_raw(json!({"rater_id": "r1", "example_id": "1-model", "score": 2.5}))
        .await
        .unwrap_err();
    assert_eq!(code(frac), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(client.progress().await.unwrap().ratings_total, 1);
}

#[tokio::test]
async fn export_round_trips_into_a_dataset() {
    let dir = TempDir::new().unwrap();
    let client = start(config(&dir, 5)).await;

    let empty = client.export().await.unwrap();
    assert_eq!(empty.lines().count(), 10);
    assert!(empty
        .lines()
        .all(|l| l.contains("\"ready\":false") && l.contains("\"ratings\":[]")));

    let progress = client.progress().await.unwrap();
    for r in 0..20u8 {
        for (i, c) in progress.per_example.iter().enumerate() {
            let score = (r as usize + i) as u8 % 6;
            client
                .submit_rating(&format!("r{r}"), &c.example_id, score)
                .await
                .unwrap();
        }
    }
    let first = client.export().await.unwrap();
    assert_eq!(first, client.export().await.unwrap());
    assert!(first.lines().all(|l| l.contains("\"ready\":true")));

    let ds = client.export_dataset().await.unwrap();
    assert_eq!(ds.n_contexts(), 5);
    for (i, e) in ds.examples().iter().enumerate() {
        let expected: Vec<f64> = (0..20).map(|r| ((r + i) % 6) as f64).collect();
        assert_eq!(e.ratings, expected);
        assert_eq!(e.token_count, 5);
    }
    assert_eq!(client.progress().await.unwrap().fully_rated, 10);
}

#[tokio::test]
async fn restart_replays_the_log_and_drops_a_torn_line() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, 5);
    let client = start(cfg.clone()).await;
    for id in ["0-model", "1-reference", "2-model"] {
        client.submit_rating("r1", id, 3).await.unwrap();
    }
    let before = client.export().await.unwrap();

    let mut log = std::fs::OpenOptions::new()
        .append(true)
        .open(&cfg.log)
        .unwrap();
    log.write_all(br#"{"example_id":"3-mod"#).unwrap();
    drop(log);

    let again = start(cfg.clone()).await;
    assert_eq!(again.export().await.unwrap(), before);
    assert_eq!(
        code(again.submit_rating("r1", "0-model", 1).await.unwrap_err()),
        StatusCode::CONFLICT
    );
    again.submit_rating("r1", "3-model", 5).await.unwrap();
    let third = start(cfg).await;
    assert_eq!(third.progress().await.unwrap().ratings_total, 4);
}

#[tokio::test]
async fn corrupt_log_line_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, 2);
    std::fs::write(&cfg.log, "not json\n").unwrap();
    assert!(app(&cfg).is_err());
}

#[tokio::test]
async fn without_a_pool_tasks_are_unavailable() {
    let dir = TempDir::new().unwrap();
    let client = start(ServiceConfig {
        pool: None,
        log: dir.path().join("ratings.jsonl"),
        ..Default::default()
    })
    .await;
    assert_eq!(
        code(client.next_batch("r1").await.unwrap_err()),
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(client.progress().await.unwrap().examples_total, 0);
    assert_eq!(client.instructions().await.unwrap().scale.len(), 6);
}
