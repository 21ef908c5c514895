// SPDX-License-Identifier: Apache-2.0

//! Evaluation datasets: paired reference and model outputs with model
//! log-probabilities and raw per-rater typicality scores.
//!
//! The on-disk format is JSONL, one [`EvaluatedExample`] per line:
//!
//! ```text
//! {"example_id": "c1-ref", "context": "...", "output_text": "...",
//!  "origin": "reference", "log_p_model": -12.3, "log_base": "e",
//!  "ratings": [4, 5, 3], "token_count": 7}
//! ```
//!
//! `log_base` and `token_count` are optional. Log-probabilities are converted
//! to natural log on ingestion; a missing `token_count` is computed with
//! [`tokenize_count`]. Optional `rater_ids`, parallel to `ratings`, are kept
//! when present so rater panels can be resampled.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest and highest admissible typicality score.
pub const MIN_SCORE: f64 = 0.0;
pub const MAX_SCORE: f64 = 5.0;

/// One rater's typicality judgment of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub example_id: String,
    pub rater_id: String,
    pub score: f64,
    pub submitted_at: DateTime<Utc>,
}

/// Whether an output was drawn from the reference distribution or the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Reference,
    Model,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Reference => "reference",
            Origin::Model => "model",
        }
    }
}

/// Base of the logarithm used for `log_p_model` in an input record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    /// Converts a logarithm in this base to a natural logarithm.
    pub fn to_natural(self, value: f64) -> f64 {
        match self {
            LogBase::E => value,
            LogBase::Two => value * std::f64::consts::LN_2,
            LogBase::Ten => value * std::f64::consts::LN_10,
        }
    }
}

/// A single (context, output) pair with everything the feature maps need.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedExample {
    pub example_id: String,
    pub context: String,
    pub output_text: String,
    pub origin: Origin,
    /// Natural-log probability of `output_text` under the evaluated model.
    pub log_p_model: f64,
    pub ratings: Vec<f64>,
    /// Rater identities parallel to `ratings`, when known.
    pub rater_ids: Option<Vec<String>>,
    pub token_count: usize,
}

impl EvaluatedExample {
    fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidExample {
            example_id: self.example_id.clone(),
            message,
        };
        if self.ratings.is_empty() {
            return Err(Error::EmptyRatings {
                example_id: self.example_id.clone(),
            });
        }
        if let Some(&score) = self
            .ratings
            .iter()
            .find(|s| !(MIN_SCORE..=MAX_SCORE).contains(*s))
        {
            return Err(Error::ScoreOutOfRange {
                example_id: self.example_id.clone(),
                score,
            });
        }
        if self.token_count == 0 {
            return Err(invalid("token_count must be at least 1".into()));
        }
        if !self.log_p_model.is_finite() {
            return Err(invalid(format!(
                "log_p_model {} is not finite",
                self.log_p_model
            )));
        }
        if let Some(ids) = &self.rater_ids {
            if ids.len() != self.ratings.len() {
                return Err(invalid(format!(
                    "{} rater_ids for {} ratings",
                    ids.len(),
                    self.ratings.len()
                )));
            }
        }
        Ok(())
    }
}

/// Mean human judgment: the arithmetic mean of the replicate ratings.
pub fn hj(example: &EvaluatedExample) -> Result<f64> {
    if example.ratings.is_empty() {
        return Err(Error::EmptyRatings {
            example_id: example.example_id.clone(),
        });
    }
    Ok(example.ratings.iter().sum::<f64>() / example.ratings.len() as f64)
}

/// Number of whitespace-delimited tokens. Placeholders such as `<UNK>` count
/// as one token each.
pub fn tokenize_count(text: &str) -> Result<usize> {
    match text.split_whitespace().count() {
        0 => Err(Error::EmptyText),
        n => Ok(n),
    }
}

/// A validated set of 2n examples: one reference and one model output per
/// context row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    examples: Vec<EvaluatedExample>,
    /// (reference index, model index) per context row, in order of the
    /// reference rows.
    pairs: Vec<(usize, usize)>,
}

impl EvalDataset {
    /// Validates every example and pairs reference with model rows.
    ///
    /// Contexts are compared as strings and may repeat (unconditional tasks
    /// share the empty context). Within a context the i-th reference row is
    /// paired with the i-th model row; the counts must match.
    pub fn new(examples: Vec<EvaluatedExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for example in &examples {
            example.validate()?;
        }

        let mut order: Vec<&str> = Vec::new();
        let mut by_context: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
        for (i, example) in examples.iter().enumerate() {
            let entry = by_context.entry(&example.context).or_insert_with(|| {
                order.push(&example.context);
                (Vec::new(), Vec::new())
            });
            match example.origin {
                Origin::Reference => entry.0.push(i),
                Origin::Model => entry.1.push(i),
            }
        }

        let mut pairs = Vec::with_capacity(examples.len() / 2);
        for context in order {
            let (refs, models) = &by_context[context];
            if refs.len() != models.len() {
                return Err(Error::Unpaired {
                    context: context.to_string(),
                    references: refs.len(),
                    models: models.len(),
                });
            }
            pairs.extend(refs.iter().copied().zip(models.iter().copied()));
        }
        pairs.sort_unstable();

        Ok(EvalDataset { examples, pairs })
    }

    pub fn examples(&self) -> &[EvaluatedExample] {
        &self.examples
    }

    pub fn n_contexts(&self) -> usize {
        self.pairs.len()
    }

    /// Index pairs `(reference, model)` into [`EvalDataset::examples`].
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Smallest number of ratings held by any example.
    pub fn min_ratings(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.ratings.len())
            .min()
            .unwrap_or(0)
    }

    pub fn into_examples(self) -> Vec<EvaluatedExample> {
        self.examples
    }
}

/// Wire form of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    example_id: String,
    #[serde(default)]
    context: String,
    output_text: String,
    origin: Origin,
    log_p_model: f64,
    #[serde(default, skip_serializing_if = "is_natural")]
    log_base: LogBase,
    ratings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rater_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_count: Option<usize>,
}

fn is_natural(base: &LogBase) -> bool {
    *base == LogBase::E
}

/// Input formats accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Jsonl,
}

/// Reads and validates a dataset. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_dataset<R: BufRead>(source: R, format: Format) -> Result<EvalDataset> {
    match format {
        Format::Jsonl => load_jsonl(source),
    }
}

fn load_jsonl<R: BufRead>(source: R) -> Result<EvalDataset> {
    let mut examples = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let example = example_from_record(record).map_err(|e| match e {
            Error::EmptyText => Error::Parse {
                line: line_no,
                message: "output_text is empty".into(),
            },
            other => Error::Parse {
                line: line_no,
                message: other.to_string(),
            },
        })?;
        example.validate().map_err(|e| match e {
            // keep the typed variants for rating problems
            e @ (Error::EmptyRatings { .. } | Error::ScoreOutOfRange { .. }) => e,
            other => Error::Parse {
                line: line_no,
                message: other.to_string(),
            },
        })?;
        examples.push(example);
    }
    EvalDataset::new(examples)
}

fn example_from_record(record: Record) -> Result<EvaluatedExample> {
    let token_count = match record.token_count {
        Some(n) => n,
        None => tokenize_count(&record.output_text)?,
    };
    Ok(EvaluatedExample {
        example_id: record.example_id,
        context: record.context,
        output_text: record.output_text,
        origin: record.origin,
        log_p_model: record.log_base.to_natural(record.log_p_model),
        ratings: record.ratings,
        rater_ids: record.rater_ids,
        token_count,
    })
}

/// Writes a dataset as JSONL in natural-log form with explicit token counts,
/// so that [`load_dataset`] reproduces it exactly.
pub fn write_dataset<W: Write>(dataset: &EvalDataset, mut out: W) -> Result<()> {
    for example in dataset.examples() {
        let record = Record {
            example_id: example.example_id.clone(),
            context: example.context.clone(),
            output_text: example.output_text.clone(),
            origin: example.origin,
            log_p_model: example.log_p_model,
            log_base: LogBase::E,
            ratings: example.ratings.clone(),
            rater_ids: example.rater_ids.clone(),
            token_count: Some(example.token_count),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, context: &str, origin: &str, ratings: &str) -> String {
        format!(
            r#"{{"example_id":"{id}","context":"{context}","output_text":"a b c","origin":"{origin}","log_p_model":-3.0,"ratings":{ratings}}}"#
        )
    }

    fn load(text: &str) -> Result<EvalDataset> {
        load_dataset(text.as_bytes(), Format::Jsonl)
    }

    #[test]
    fn minimal_paired_input() {
        let text = [
            line("1r", "c1", "reference", "[4,5]"),
            line("1m", "c1", "model", "[2,3]"),
            line("2r", "c2", "reference", "[4]"),
            line("2m", "c2", "model", "[1]"),
        ]
        .join("\n");
        let ds = load(&text).unwrap();
        assert_eq!(ds.n_contexts(), 2);
        assert_eq!(ds.pairs(), &[(0, 1), (2, 3)]);
        assert_eq!(ds.examples()[0].token_count, 3);
    }

    #[test]
    fn two_references_no_model_is_unpaired() {
        let text = [
            line("a", "c1", "reference", "[4]"),
            line("b", "c1", "reference", "[4]"),
        ]
        .join("\n");
        assert!(matches!(
            load(&text),
            Err(Error::Unpaired {
                references: 2,
                models: 0,
                ..
            })
        ));
    }

    #[test]
    fn empty_ratings_rejected() {
        let text = [
            line("a", "c1", "reference", "[]"),
            line("b", "c1", "model", "[3]"),
        ]
        .join("\n");
        assert!(matches!(load(&text), Err(Error::EmptyRatings { .. })));
    }

    #[test]
    fn score_out_of_range_rejected() {
        let text = [
            line("a", "c1", "reference", "[5.5]"),
            line("b", "c1", "model", "[3]"),
        ]
        .join("\n");
        assert!(matches!(load(&text), Err(Error::ScoreOutOfRange { .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", line("a", "c1", "reference", "[1]"));
        match load(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_base_converted_and_token_count_explicit_wins() {
        let text = concat!(
            r#"{"example_id":"a","context":"","output_text":"x y","origin":"reference","log_p_model":-2,"log_base":"2","ratings":[3],"token_count":9}"#,
            "\n",
            r#"{"example_id":"b","context":"","output_text":"x y","origin":"model","log_p_model":-1,"log_base":"10","ratings":[3]}"#,
        );
        let ds = load(text).unwrap();
        let ex = ds.examples();
        assert!((ex[0].log_p_model + 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ex[1].log_p_model + std::f64::consts::LN_10).abs() < 1e-15);
        assert_eq!(ex[0].token_count, 9);
        assert_eq!(ex[1].token_count, 2);
    }

    #[test]
    fn unconditional_contexts_pair_by_multiset() {
        let text = [
            line("a", "", "reference", "[1]"),
            line("b", "", "reference", "[1]"),
            line("c", "", "model", "[1]"),
            line("d", "", "model", "[1]"),
        ]
        .join("\n");
        let ds = load(&text).unwrap();
        assert_eq!(ds.n_contexts(), 2);
        assert_eq!(ds.pairs(), &[(0, 2), (1, 3)]);
    }

    #[test]
    fn hj_is_mean() {
        let mut ex = EvaluatedExample {
            example_id: "x".into(),
            context: String::new(),
            output_text: "x".into(),
            origin: Origin::Model,
            log_p_model: -1.0,
            ratings: vec![4.0, 4.0, 4.0],
            rater_ids: None,
            token_count: 1,
        };
        assert_eq!(hj(&ex).unwrap(), 4.0);
        ex.ratings = vec![2.0, 3.0];
        assert_eq!(hj(&ex).unwrap(), 2.5);
        // twenty replicates averaging 2.6
        ex.ratings = [vec![3.0; 12], vec![2.0; 8]].concat();
        assert!((hj(&ex).unwrap() - 2.6).abs() < 1e-12);
        ex.ratings.clear();
        assert!(matches!(hj(&ex), Err(Error::EmptyRatings { .. })));
    }

    #[test]
    fn token_counts() {
        assert_eq!(
            tokenize_count("Agassi withdraws from Australian Open.").unwrap(),
            5
        );
        assert_eq!(tokenize_count("a").unwrap(), 1);
        assert_eq!(
            tokenize_count("New vaccines for key <UNK> virus shown effective").unwrap(),
            8
        );
        assert!(matches!(tokenize_count("   "), Err(Error::EmptyText)));
    }
}
