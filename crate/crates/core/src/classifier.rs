// SPDX-License-Identifier: Apache-2.0

//! Leave-one-out error of an unweighted k-nearest-neighbor classifier under
//! the L2 distance.
//!
//! When several points sit at exactly the k-th smallest distance they share
//! the remaining votes equally: with `m` points strictly closer and `t` points
//! tied, each tied point carries weight `(k - m) / t`. Votes always total k,
//! results do not depend on the order of the points, and duplicated feature
//! values (common with discrete features) are pooled instead of being cut off
//! at an arbitrary index. Vote weights are compared in exact integer
//! arithmetic; an even split is resolved by [`TiePolicy`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Class label: `Model` is z = 0, `Reference` is z = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Model = 0,
    Reference = 1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: FeatureVector,
    pub label: Label,
    pub source_example_id: String,
}

impl LabeledPoint {
    pub fn new(
        features: FeatureVector,
        label: Label,
        source_example_id: impl Into<String>,
    ) -> Self {
        LabeledPoint {
            features,
            label,
            source_example_id: source_example_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// An even split counts as half an error.
    #[default]
    HalfError,
    /// An even split predicts the model class.
    PredictModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub tie_policy: TiePolicy,
}

impl KnnConfig {
    pub const DEFAULT_K: usize = 16;

    pub fn with_k(k: usize) -> Self {
        KnnConfig {
            k,
            ..Self::default()
        }
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: Self::DEFAULT_K,
            tie_policy: TiePolicy::HalfError,
        }
    }
}

/// Outcome of classifying one held-out point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
    Tie,
}

/// Reference share of a k-neighbor vote, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    numerator: u64,
    denominator: u64,
}

impl Vote {
    /// `closer` points strictly inside the k-th distance (`closer_ref` of
    /// them reference) and `tied` points at it (`tied_ref` reference).
    fn new(k: usize, closer: usize, closer_ref: usize, tied: usize, tied_ref: usize) -> Self {
        let [k, closer, closer_ref, tied, tied_ref] =
            [k, closer, closer_ref, tied, tied_ref].map(|x| x as u64);
        Vote {
            numerator: closer_ref * tied + tied_ref * (k - closer),
            denominator: k * tied,
        }
    }

    pub fn share(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    fn verdict(&self, truth: Label, policy: TiePolicy) -> Verdict {
        let predicted = match (2 * self.numerator).cmp(&self.denominator) {
            std::cmp::Ordering::Greater => Label::Reference,
            std::cmp::Ordering::Less => Label::Model,
            std::cmp::Ordering::Equal => match policy {
                TiePolicy::HalfError => return Verdict::Tie,
                TiePolicy::PredictModel => Label::Model,
            },
        };
        if predicted == truth {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        }
    }
}

/// Per-fold result of the leave-one-out pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fold {
    pub vote: Vote,
    pub verdict: Verdict,
}

impl Fold {
    /// Share of the k votes cast for `Reference`.
    pub fn confidence(&self) -> f64 {
        self.vote.share()
    }

    /// Error contribution in half units: 0, 1 (tie) or 2.
    fn error_halves(&self) -> u64 {
        match self.verdict {
            Verdict::Correct => 0,
            Verdict::Tie => 1,
            Verdict::Incorrect => 2,
        }
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(points: &[LabeledPoint]) -> Result<usize> {
    let dim = points.first().map(|p| p.features.dim()).unwrap_or(0);
    if let Some(bad) = points.iter().find(|p| p.features.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.features.dim(),
        });
    }
    Ok(dim)
}

fn check_points(points: &[LabeledPoint], config: &KnnConfig) -> Result<()> {
    if config.k == 0 {
        return Err(Error::ZeroK);
    }
    if config.k >= points.len() {
        return Err(Error::TooFewPoints {
            k: config.k,
            points: points.len(),
        });
    }
    check_dims(points)?;
    Ok(())
}

/// Vote of the k nearest points to `query`, skipping `exclude`. `scratch`
/// is reused across calls.
fn knn_vote(
    points: &[LabeledPoint],
    query: &[f64],
    exclude: Option<usize>,
    k: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Vote {
    scratch.clear();
    scratch.extend(
        points
            .iter()
            .enumerate()
            .filter(|&(j, _)| Some(j) != exclude)
            .map(|(_, p)| {
                (
                    squared_distance(query, p.features.values()),
                    p.label == Label::Reference,
                )
            }),
    );
    let radius = scratch
        .select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0))
        .1
         .0;

    let (mut closer, mut closer_ref, mut tied, mut tied_ref) = (0, 0, 0, 0);
    for &(d, is_ref) in scratch.iter() {
        if d < radius {
            closer += 1;
            closer_ref += usize::from(is_ref);
        } else if d == radius {
            tied += 1;
            tied_ref += usize::from(is_ref);
        }
    }
    Vote::new(k, closer, closer_ref, tied, tied_ref)
}

/// Classifies every point from the other points. Folds run in parallel; the
/// result does not depend on scheduling.
pub fn loo_folds(points: &[LabeledPoint], config: &KnnConfig) -> Result<Vec<Fold>> {
    check_points(points, config)?;
    let k = config.k;
    Ok(points
        .par_iter()
        .enumerate()
        .map_init(
            || Vec::with_capacity(points.len()),
            |scratch, (i, p)| {
                let vote = knn_vote(points, p.features.values(), Some(i), k, scratch);
                Fold {
                    vote,
                    verdict: vote.verdict(p.label, config.tie_policy),
                }
            },
        )
        .collect())
}

/// Fraction of points misclassified when each is predicted from its k
/// nearest other points.
pub fn loo_error(points: &[LabeledPoint], config: &KnnConfig) -> Result<f64> {
    let folds = loo_folds(points, config)?;
    Ok(error_from_folds(&folds))
}

pub(crate) fn error_from_folds(folds: &[Fold]) -> f64 {
    let halves: u64 = folds.iter().map(Fold::error_halves).sum();
    halves as f64 / (2 * folds.len()) as f64
}

/// Share of the k votes of the nearest points (other than `exclude`) cast
/// for `Reference`.
///
/// Unlike [`loo_error`], `k` may equal the number of candidate points.
pub fn knn_confidence(
    points: &[LabeledPoint],
    query: &FeatureVector,
    exclude: Option<usize>,
    config: &KnnConfig,
) -> Result<f64> {
    if config.k == 0 {
        return Err(Error::ZeroK);
    }
    let dim = check_dims(points)?;
    if !points.is_empty() && query.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: query.dim(),
        });
    }
    let candidates = points.len() - usize::from(exclude.is_some_and(|i| i < points.len()));
    if config.k > candidates {
        return Err(Error::TooFewPoints {
            k: config.k,
            points: candidates,
        });
    }
    let mut scratch = Vec::with_capacity(points.len());
    Ok(knn_vote(points, query.values(), exclude, config.k, &mut scratch).share())
}

/// Reference implementation of [`loo_error`]: for each point, sorts all
/// other points by distance, reads off the k-th distance and weighs the
/// points tied with it explicitly. Sequential and allocation-heavy; meant for
/// cross-checking.
pub fn brute_force_loo(points: &[LabeledPoint], config: &KnnConfig) -> Result<f64> {
    check_points(points, config)?;
    let n = points.len();
    let k = config.k;
    let mut errors = 0.0;
    for i in 0..n {
        let query = points[i].features.values();
        let mut ranked: Vec<(f64, Label)> = Vec::with_capacity(n - 1);
        for (j, other_point) in points.iter().enumerate() {
            if j == i {
                continue;
            }
            let other = other_point.features.values();
            let mut d = 0.0;
            for t in 0..query.len() {
                d += (query[t] - other[t]) * (query[t] - other[t]);
            }
            ranked.push((d, other_point.label));
        }
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));

        let radius = ranked[k - 1].0;
        let first_tied = ranked.iter().position(|r| r.0 == radius).unwrap();
        let last_tied = ranked.iter().rposition(|r| r.0 == radius).unwrap();
        let n_tied = (last_tied - first_tied + 1) as u64;
        let slots = (k - first_tied) as u64;

        // weights scaled by n_tied to stay integral
        let mut weight = [0u64; 2];
        for &(_, label) in &ranked[..first_tied] {
            weight[label as usize] += n_tied;
        }
        for &(_, label) in &ranked[first_tied..=last_tied] {
            weight[label as usize] += slots;
        }
        let [model_weight, ref_weight] = weight;

        let truth = points[i].label;
        errors += if ref_weight > model_weight {
            if truth == Label::Reference {
                0.0
            } else {
                1.0
            }
        } else if model_weight > ref_weight {
            if truth == Label::Model {
                0.0
            } else {
                1.0
            }
        } else {
            match config.tie_policy {
                TiePolicy::HalfError => 0.5,
                TiePolicy::PredictModel => {
                    if truth == Label::Model {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        };
    }
    Ok(errors / n as f64)
}
