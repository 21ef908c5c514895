// SPDX-License-Identifier: Apache-2.0

//! HUSE and its quality/diversity decomposition, stability under
//! subsampling of examples and raters, and the 2-D decision surface.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    error_from_folds, knn_confidence, loo_error, loo_folds, KnnConfig, Label, LabeledPoint, Verdict,
};
use crate::dataset::{EvalDataset, EvaluatedExample, Origin};
use crate::error::{Error, Result};
use crate::features::{scale_rows, FeatureSpec, FeatureVector, LengthNormalizer, ScalingProfile};

/// Per-example diagnostics under the HUSE features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleDiagnostic {
    pub example_id: String,
    pub origin: Origin,
    pub scaled_features: Vec<f64>,
    /// Share of the k leave-one-out neighbors that are reference outputs.
    pub confidence: f64,
    pub correctly_classified: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuseReport {
    pub huse: f64,
    pub huse_q: f64,
    pub huse_d: f64,
    pub n_contexts: usize,
    pub k: usize,
    /// Set when HUSE exceeds 1 or HUSE-Q exceeds HUSE, i.e. when a
    /// discriminator did worse than chance.
    pub degenerate: bool,
    pub per_example: Vec<ExampleDiagnostic>,
}

fn label_of(origin: Origin) -> Label {
    match origin {
        Origin::Reference => Label::Reference,
        Origin::Model => Label::Model,
    }
}

/// Applies a feature map to every example (in dataset order), fits the
/// unit-variance scaling on all of them and attaches labels.
pub fn labeled_points(
    examples: &[EvaluatedExample],
    spec: &FeatureSpec,
) -> Result<(ScalingProfile, Vec<LabeledPoint>)> {
    let raw = examples
        .iter()
        .map(|e| spec.apply(e))
        .collect::<Result<Vec<_>>>()?;
    let (profile, scaled) = scale_rows(&raw)?;
    let points = scaled
        .into_iter()
        .zip(examples)
        .map(|(f, e)| LabeledPoint::new(f, label_of(e.origin), e.example_id.clone()))
        .collect();
    Ok((profile, points))
}

/// Twice the leave-one-out error under one feature map.
pub fn feature_score(dataset: &EvalDataset, spec: &FeatureSpec, config: &KnnConfig) -> Result<f64> {
    let (_, points) = labeled_points(dataset.examples(), spec)?;
    Ok(2.0 * loo_error(&points, config)?)
}

/// HUSE-D from HUSE and HUSE-Q: `1 + huse − huse_q`.
pub fn huse_d(huse: f64, huse_q: f64) -> f64 {
    1.0 + huse - huse_q
}

pub fn compute_huse(dataset: &EvalDataset, config: &KnnConfig) -> Result<HuseReport> {
    compute_huse_with(dataset, config, LengthNormalizer::TokenCount)
}

pub fn compute_huse_with(
    dataset: &EvalDataset,
    config: &KnnConfig,
    normalizer: LengthNormalizer,
) -> Result<HuseReport> {
    let spec = FeatureSpec {
        normalizer,
        ..FeatureSpec::HUSE
    };
    let (_, points) = labeled_points(dataset.examples(), &spec)?;
    let folds = loo_folds(&points, config)?;
    let huse = 2.0 * error_from_folds(&folds);
    let huse_q = feature_score(dataset, &FeatureSpec::HJ, config)?;

    let per_example = points
        .into_iter()
        .zip(&folds)
        .zip(dataset.examples())
        .map(|((p, fold), e)| ExampleDiagnostic {
            example_id: p.source_example_id,
            origin: e.origin,
            scaled_features: p.features.into_values(),
            confidence: fold.confidence(),
            correctly_classified: fold.verdict,
        })
        .collect();

    Ok(HuseReport {
        huse,
        huse_q,
        huse_d: huse_d(huse, huse_q),
        n_contexts: dataset.n_contexts(),
        k: config.k,
        degenerate: huse > 1.0 || huse_q > huse,
        per_example,
    })
}

/// How raters are subsampled in [`stability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterSampling {
    /// Each example's ratings are subsampled independently.
    #[default]
    PerExample,
    /// One panel of rater ids is drawn per replicate and applied to every
    /// example. Requires every example to carry the same set of rater ids.
    Panel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub n_examples: usize,
    pub n_raters: usize,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub rater_sampling: RaterSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n_examples_used: usize,
    pub n_raters_used: usize,
    pub n_bootstrap: usize,
    pub rater_sampling: RaterSampling,
    pub seed: u64,
    pub k: usize,
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
    pub replicates: Vec<f64>,
}

impl StabilityReport {
    /// Width of the 90% band.
    pub fn spread(&self) -> f64 {
        self.p95 - self.p05
    }
}

/// Linear interpolation between closest ranks on sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Rater ids shared by every example, or an error when they differ.
fn aligned_panel(dataset: &EvalDataset) -> Result<Vec<String>> {
    let mut panel: Option<BTreeSet<&str>> = None;
    for e in dataset.examples() {
        let ids = e.rater_ids.as_ref().ok_or_else(|| {
            Error::Precondition(format!("example {:?} has no rater ids", e.example_id))
        })?;
        let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if set.len() != ids.len() {
            return Err(Error::Precondition(format!(
                "example {:?} lists a rater twice",
                e.example_id
            )));
        }
        match &panel {
            None => panel = Some(set),
            Some(p) if *p != set => {
                return Err(Error::Precondition(
                    "rater ids differ between examples; use per-example sampling".into(),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(panel
        .unwrap_or_default()
        .into_iter()
        .map(String::from)
        .collect())
}

/// Re-estimates HUSE on `n_bootstrap` subsamples of contexts (and raters),
/// each drawn without replacement with seed `seed + replicate`.
pub fn stability(
    dataset: &EvalDataset,
    config: &StabilityConfig,
    knn: &KnnConfig,
) -> Result<StabilityReport> {
    if config.n_bootstrap == 0 {
        return Err(Error::Precondition("n_bootstrap must be at least 1".into()));
    }
    if config.n_examples == 0 || config.n_examples > dataset.n_contexts() {
        return Err(Error::SampleTooLarge {
            what: "examples",
            requested: config.n_examples,
            available: dataset.n_contexts(),
        });
    }
    let panel = match config.rater_sampling {
        RaterSampling::PerExample => None,
        RaterSampling::Panel => Some(aligned_panel(dataset)?),
    };
    let available_raters = panel
        .as_ref()
        .map_or_else(|| dataset.min_ratings(), Vec::len);
    if config.n_raters == 0 || config.n_raters > available_raters {
        return Err(Error::SampleTooLarge {
            what: "raters",
            requested: config.n_raters,
            available: available_raters,
        });
    }

    let replicates = (0..config.n_bootstrap as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r));
            let subset = subsample(dataset, config, panel.as_deref(), &mut rng)?;
            feature_score(&subset, &FeatureSpec::HUSE, knn)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(StabilityReport {
        n_examples_used: config.n_examples,
        n_raters_used: config.n_raters,
        n_bootstrap: config.n_bootstrap,
        rater_sampling: config.rater_sampling,
        seed: config.seed,
        k: knn.k,
        mean: replicates.iter().sum::<f64>() / replicates.len() as f64,
        p05: percentile(&sorted, 0.05),
        p95: percentile(&sorted, 0.95),
        replicates,
    })
}

/// Draws contexts and raters; kept examples and ratings stay in their
/// original order so a full-size draw reproduces the dataset.
fn subsample(
    dataset: &EvalDataset,
    config: &StabilityConfig,
    panel: Option<&[String]>,
    rng: &mut ChaCha8Rng,
) -> Result<EvalDataset> {
    let pairs = dataset.pairs();
    let mut keep: Vec<usize> = sample(rng, pairs.len(), config.n_examples)
        .into_iter()
        .flat_map(|i| [pairs[i].0, pairs[i].1])
        .collect();
    keep.sort_unstable();

    let chosen_panel: Option<BTreeSet<&str>> = panel.map(|p| {
        sample(rng, p.len(), config.n_raters)
            .into_iter()
            .map(|i| p[i].as_str())
            .collect()
    });

    let examples = keep
        .into_iter()
        .map(|i| {
            let e = &dataset.examples()[i];
            let selected: Vec<usize> = match &chosen_panel {
                Some(chosen) => {
                    let ids = e.rater_ids.as_ref().expect("panel checked");
                    (0..ids.len())
                        .filter(|&j| chosen.contains(ids[j].as_str()))
                        .collect()
                }
                None if config.n_raters == e.ratings.len() => (0..e.ratings.len()).collect(),
                None => {
                    let mut idx = sample(rng, e.ratings.len(), config.n_raters).into_vec();
                    idx.sort_unstable();
                    idx
                }
            };
            EvaluatedExample {
                ratings: selected.iter().map(|&j| e.ratings[j]).collect(),
                rater_ids: e
                    .rater_ids
                    .as_ref()
                    .map(|ids| selected.iter().map(|&j| ids[j].clone()).collect()),
                ..e.clone()
            }
        })
        .collect();
    EvalDataset::new(examples)
}

/// Where a surface row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceRowKind {
    Grid,
    Reference,
    Model,
}

impl SurfaceRowKind {
    fn as_str(self) -> &'static str {
        match self {
            SurfaceRowKind::Grid => "grid",
            SurfaceRowKind::Reference => "reference",
            SurfaceRowKind::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub kind: SurfaceRowKind,
    /// Coordinates in the classifier's scaled feature space.
    pub scaled: [f64; 2],
    /// The same point in raw feature units.
    pub raw: [f64; 2],
    /// Share of reference outputs among the k nearest data points (for data
    /// points, excluding the point itself).
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub grid_resolution: usize,
    pub rows: Vec<SurfaceRow>,
}

impl Surface {
    pub fn grid_rows(&self) -> impl Iterator<Item = &SurfaceRow> {
        self.rows.iter().filter(|r| r.kind == SurfaceRowKind::Grid)
    }

    /// Tab-separated rows with header
    /// `feature1 feature2 confidence kind raw_feature1 raw_feature2`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "feature1\tfeature2\tconfidence\tkind\traw_feature1\traw_feature2"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.scaled[0],
                r.scaled[1],
                r.confidence,
                r.kind.as_str(),
                r.raw[0],
                r.raw[1]
            )?;
        }
        Ok(())
    }
}

/// Evaluates the k-NN confidence over a `grid_resolution`² lattice spanning
/// the scaled HUSE features (bounding box padded by 5% per side), followed by
/// one row per data point.
pub fn export_surface(
    dataset: &EvalDataset,
    config: &KnnConfig,
    grid_resolution: usize,
) -> Result<Surface> {
    if grid_resolution < 2 {
        return Err(Error::Precondition(format!(
            "grid resolution must be at least 2, got {grid_resolution}"
        )));
    }
    let (profile, points) = labeled_points(dataset.examples(), &FeatureSpec::HUSE)?;
    let folds = loo_folds(&points, config)?;

    let axis = |d: usize| -> Vec<f64> {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.features[d]), hi.max(p.features[d]))
            });
        let span = hi - lo;
        let pad = if span > 0.0 { 0.05 * span } else { 0.5 };
        let (start, width) = (lo - pad, span + 2.0 * pad);
        (0..grid_resolution)
            .map(|i| start + width * i as f64 / (grid_resolution - 1) as f64)
            .collect()
    };
    let (xs, ys) = (axis(0), axis(1));

    let raw_of = |scaled: [f64; 2]| -> Result<[f64; 2]> {
        let raw = profile.invert(&FeatureVector::new(scaled.to_vec())?)?;
        Ok([raw[0], raw[1]])
    };

    let lattice: Vec<[f64; 2]> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect();
    let mut rows = lattice
        .par_iter()
        .map(|&scaled| {
            let confidence =
                knn_confidence(&points, &FeatureVector::new(scaled.to_vec())?, None, config)?;
            Ok(SurfaceRow {
                kind: SurfaceRowKind::Grid,
                scaled,
                raw: raw_of(scaled)?,
                confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for (p, fold) in points.iter().zip(&folds) {
        let scaled = [p.features[0], p.features[1]];
        rows.push(SurfaceRow {
            kind: match p.label {
                Label::Reference => SurfaceRowKind::Reference,
                Label::Model => SurfaceRowKind::Model,
            },
            scaled,
            raw: raw_of(scaled)?,
            confidence: fold.confidence(),
        });
    }
    Ok(Surface {
        grid_resolution,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(
        id: &str,
        context: &str,
        origin: Origin,
        log_p: f64,
        ratings: Vec<f64>,
    ) -> EvaluatedExample {
        EvaluatedExample {
            example_id: id.into(),
            context: context.into(),
            output_text: "w".into(),
            origin,
            log_p_model: log_p,
            ratings,
            rater_ids: None,
            token_count: 1,
        }
    }

    /// References clustered at high judgment and high log-probability,
    /// model outputs far away at low values on both axes.
    fn separable(n: usize) -> EvalDataset {
        let mut v = Vec::new();
        for i in 0..n {
            let c = format!("c{i}");
            let jitter = i as f64 * 0.01;
            v.push(example(
                &format!("{i}r"),
                &c,
                Origin::Reference,
                -1.0 - jitter,
                vec![4.5 + jitter / 10.0],
            ));
            v.push(example(
                &format!("{i}m"),
                &c,
                Origin::Model,
                -9.0 - jitter,
                vec![1.0 + jitter / 10.0],
            ));
        }
        EvalDataset::new(v).unwrap()
    }

    #[test]
    fn decomposition_identity_is_bitwise() {
        let ds = separable(20);
        let r = compute_huse(&ds, &KnnConfig::with_k(3)).unwrap();
        assert_eq!(r.huse_d, 1.0 + r.huse - r.huse_q);
        assert_eq!(r.huse, 0.0);
        assert_eq!(r.n_contexts, 20);
        assert_eq!(r.per_example.len(), 40);
        assert!(!r.degenerate);
    }

    #[test]
    fn verbatim_copies_are_degenerate_under_leave_one_out() {
        // Every model row copies its reference row. Holding out one row
        // leaves its twin at distance zero and its own label one short among
        // every tied group, so each fold predicts the wrong label.
        let mut v = Vec::new();
        for i in 0..30 {
            let (log_p, ratings) = (-(i as f64) - 1.0, vec![(i % 6) as f64, 2.5]);
            v.push(example(
                &format!("{i}r"),
                &format!("c{i}"),
                Origin::Reference,
                log_p,
                ratings.clone(),
            ));
            v.push(example(
                &format!("{i}m"),
                &format!("c{i}"),
                Origin::Model,
                log_p,
                ratings,
            ));
        }
        let r = compute_huse(&EvalDataset::new(v).unwrap(), &KnnConfig::default()).unwrap();
        assert_eq!(r.huse, 2.0);
        assert_eq!(r.huse_q, r.huse);
        assert_eq!(r.huse_d, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn report_arithmetic_matches_published_columns() {
        // (loo error under HUSE features, under HJ only) -> (HUSE, HUSE-Q, HUSE-D)
        for (e_huse, e_hj, huse, q, d) in [
            (0.13f64, 0.46f64, 0.26, 0.92f64, 0.34f64),
            (0.28, 0.28, 0.56, 0.56, 1.00),
        ] {
            let (h, hq) = (2.0 * e_huse, 2.0 * e_hj);
            assert!((h - huse).abs() < 1e-12);
            assert!((hq - q).abs() < 1e-12);
            assert!((1.0 + h - hq - d).abs() < 1e-12);
        }
    }

    #[test]
    fn full_size_stability_reproduces_full_data() {
        let ds = crate::oracle::sample_eval_dataset(
            &crate::oracle::random_pair(&mut ChaCha8Rng::seed_from_u64(3), 2, 3..=6),
            60,
            &crate::oracle::RaterModel {
                n_raters: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let knn = KnnConfig::default();
        let full = compute_huse(&ds, &knn).unwrap().huse;
        let cfg = StabilityConfig {
            n_examples: 60,
            n_raters: 5,
            n_bootstrap: 4,
            seed: 9,
            rater_sampling: RaterSampling::PerExample,
        };
        let rep = stability(&ds, &cfg, &knn).unwrap();
        assert!(rep.replicates.iter().all(|&h| h == full));
        assert_eq!(rep.replicates.len(), 4);
        assert_eq!(rep, stability(&ds, &cfg, &knn).unwrap());
    }

    #[test]
    fn stability_rejects_oversized_requests() {
        let ds = separable(20);
        let knn = KnnConfig::with_k(3);
        let mut cfg = StabilityConfig {
            n_examples: 21,
            n_raters: 1,
            n_bootstrap: 2,
            seed: 0,
            rater_sampling: RaterSampling::PerExample,
        };
        assert!(matches!(
            stability(&ds, &cfg, &knn),
            Err(Error::SampleTooLarge {
                what: "examples",
                ..
            })
        ));
        cfg.n_examples = 10;
        cfg.n_raters = 2;
        assert!(matches!(
            stability(&ds, &cfg, &knn),
            Err(Error::SampleTooLarge { what: "raters", .. })
        ));
        cfg.n_raters = 1;
        cfg.rater_sampling = RaterSampling::Panel;
        assert!(matches!(
            stability(&ds, &cfg, &knn),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn panel_sampling_uses_shared_raters() {
        let raters = ["a", "b", "c", "d"];
        let mut v = Vec::new();
        for i in 0..20 {
            for (origin, base) in [(Origin::Reference, 4.0), (Origin::Model, 1.0)] {
                let mut e = example(
                    &format!("{i}{base}"),
                    &format!("c{i}"),
                    origin,
                    -(i as f64),
                    vec![base, base, base + 0.5, base - 0.5],
                );
                e.rater_ids = Some(raters.iter().map(|s| s.to_string()).collect());
                v.push(e);
            }
        }
        let ds = EvalDataset::new(v).unwrap();
        let cfg = StabilityConfig {
            n_examples: 20,
            n_raters: 2,
            n_bootstrap: 3,
            seed: 1,
            rater_sampling: RaterSampling::Panel,
        };
        let rep = stability(&ds, &cfg, &KnnConfig::with_k(3)).unwrap();
        assert_eq!(rep.replicates.len(), 3);
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), 0.0);
        assert_eq!(percentile(&xs, 0.5), 2.0);
        assert!((percentile(&xs, 0.95) - 3.8).abs() < 1e-12);
    }

    #[test]
    fn surface_on_separable_data() {
        let ds = separable(20);
        let s = export_surface(&ds, &KnnConfig::with_k(1), 2).unwrap();
        assert_eq!(s.grid_rows().count(), 4);
        assert_eq!(s.rows.len(), 4 + 40);
        for r in s.grid_rows() {
            assert!(r.confidence == 0.0 || r.confidence == 1.0);
        }
        // lattice corners: high/high is the reference side, low/low the model side
        let grid: Vec<_> = s.grid_rows().collect();
        assert_eq!(grid[0].confidence, 0.0);
        assert_eq!(grid[3].confidence, 1.0);
        let mut tsv = Vec::new();
        s.write_tsv(&mut tsv).unwrap();
        let text = String::from_utf8(tsv).unwrap();
        assert!(text.starts_with("feature1\tfeature2\tconfidence"));
        assert_eq!(text.lines().count(), 45);
        assert!(export_surface(&ds, &KnnConfig::with_k(1), 1).is_err());
    }
}
