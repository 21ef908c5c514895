// SPDX-License-Identifier: Apache-2.0

//! Estimator checks against discrete distributions with known total
//! variation.

use std::fs;

use clap::{Args, ValueEnum};
use huse_core::classifier::loo_error;
use huse_core::metrics::{compute_huse, feature_score};
use huse_core::oracle::{
    check_approximation_bound, exact_optimal_error_rate, exact_tv, random_pairs,
    sample_eval_dataset, sample_opt_points, BoundCheck, ConstantQuantizer, FeatureQuantizer,
    GridQuantizer, IdentityQuantizer, SignQuantizer,
};
use huse_core::{DiscretePair, FeatureSpec, KnnConfig, RaterModel};
use serde::{Deserialize, Serialize};

use crate::{emit_json, Common, Failure, Features, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Compare the k-NN estimate on sampled data with the exact optimal error.
    Convergence,
    /// Check the approximation bound for a set of feature quantizers.
    Bounds,
    /// Exact TV and estimated HUSE of the reference annealed at several
    /// temperatures.
    AnnealSweep,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Samples per side (contexts for HUSE features).
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Feature map used by the estimator.
    #[arg(long, value_enum, default_value = "opt")]
    features: Features,
    /// Independent samples per pair in convergence mode, seeded `seed + r`.
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    /// Temperatures for anneal-sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.7,0.9,1.0")]
    temps: Vec<f64>,
}

/// Generator parameters: `count` random pairs, pair `i` drawn from seed
/// `seed + i`, with support sizes uniform in `[min_support, max_support]`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Generator {
    count: usize,
    #[serde(default = "one")]
    n_contexts: usize,
    min_support: usize,
    max_support: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SynthSpec {
    Generated { generator: Generator },
    Pair(DiscretePair),
}

fn load_pairs(args: &SynthArgs) -> Outcome<Vec<DiscretePair>> {
    let path = &args.common.input;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| {
        Failure::Input(format!(
            "{} is neither a distribution pair nor generator parameters: {e}",
            path.display()
        ))
    })?;
    match spec {
        SynthSpec::Pair(pair) => Ok(vec![pair]),
        SynthSpec::Generated { generator: g } => {
            if g.count == 0
                || g.n_contexts == 0
                || g.min_support == 0
                || g.min_support > g.max_support
            {
                return Err(Failure::Input(format!(
                    "invalid generator parameters {g:?}"
                )));
            }
            Ok(random_pairs(
                g.count,
                args.common.seed,
                g.n_contexts,
                g.min_support..=g.max_support,
            ))
        }
    }
}

#[derive(Serialize)]
struct ConvergenceRow {
    pair: usize,
    seed: u64,
    exact_tv: f64,
    l_star: f64,
    estimate: f64,
    gap: f64,
}

#[derive(Serialize)]
struct ConvergenceReport {
    mode: Mode,
    features: &'static str,
    n: usize,
    k: usize,
    rows: Vec<ConvergenceRow>,
    mean_gap: f64,
    max_gap: f64,
}

fn feature_name(features: Features) -> &'static str {
    match features {
        Features::Huse => "huse",
        Features::Hj => "hj",
        Features::Opt => "opt",
    }
}

/// Twice the LOO error on one sample of `pair`.
fn estimate(
    pair: &DiscretePair,
    features: Features,
    n: usize,
    seed: u64,
    knn: &KnnConfig,
) -> Outcome<f64> {
    Ok(match features {
        Features::Opt => 2.0 * loo_error(&sample_opt_points(pair, n, seed)?, knn)?,
        Features::Huse => {
            compute_huse(
                &sample_eval_dataset(pair, n, &RaterModel::default(), seed)?,
                knn,
            )?
            .huse
        }
        Features::Hj => feature_score(
            &sample_eval_dataset(pair, n, &RaterModel::default(), seed)?,
            &FeatureSpec::HJ,
            knn,
        )?,
    })
}

fn convergence(args: &SynthArgs, pairs: &[DiscretePair], knn: &KnnConfig) -> Outcome {
    let mut rows = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let l_star = exact_optimal_error_rate(pair);
        for r in 0..args.repeats.max(1) {
            let seed = args.common.seed.wrapping_add(r);
            let estimate = estimate(pair, args.features, args.n, seed, knn)?;
            rows.push(ConvergenceRow {
                pair: i,
                seed,
                exact_tv: exact_tv(pair),
                l_star,
                estimate,
                gap: (estimate - l_star).abs(),
            });
        }
    }
    let mean_gap = rows.iter().map(|r| r.gap).sum::<f64>() / rows.len() as f64;
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    emit_json(
        args.common.out.as_deref(),
        &ConvergenceReport {
            mode: Mode::Convergence,
            features: feature_name(args.features),
            n: args.n,
            k: knn.k,
            rows,
            mean_gap,
            max_gap,
        },
    )
}

#[derive(Serialize)]
struct BoundRow {
    pair: usize,
    quantizer: &'static str,
    #[serde(flatten)]
    check: BoundCheck,
}

#[derive(Serialize)]
struct BoundsReport {
    mode: Mode,
    rows: Vec<BoundRow>,
    all_hold: bool,
}

fn bounds(args: &SynthArgs, pairs: &[DiscretePair]) -> Outcome {
    let quantizers: [(&'static str, &dyn FeatureQuantizer); 5] = [
        ("identity", &IdentityQuantizer),
        ("constant", &ConstantQuantizer),
        ("sign", &SignQuantizer),
        (
            "grid2",
            &GridQuantizer {
                human_bins: 2,
                model_bins: 2,
            },
        ),
        (
            "grid8",
            &GridQuantizer {
                human_bins: 8,
                model_bins: 8,
            },
        ),
    ];
    let mut rows = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        for (name, q) in quantizers {
            rows.push(BoundRow {
                pair: i,
                quantizer: name,
                check: check_approximation_bound(pair, q)?,
            });
        }
    }
    let all_hold = rows.iter().all(|r| r.check.holds);
    emit_json(
        args.common.out.as_deref(),
        &BoundsReport {
            mode: Mode::Bounds,
            rows,
            all_hold,
        },
    )
}

#[derive(Serialize)]
struct AnnealRow {
    pair: usize,
    t: f64,
    exact_tv: f64,
    l_star: f64,
    estimate: Option<f64>,
}

#[derive(Serialize)]
struct AnnealReport {
    mode: Mode,
    features: &'static str,
    n: usize,
    k: usize,
    rows: Vec<AnnealRow>,
}

fn anneal_sweep(args: &SynthArgs, pairs: &[DiscretePair], knn: &KnnConfig) -> Outcome {
    let mut rows = Vec::new();
    for (i, base) in pairs.iter().enumerate() {
        for &t in &args.temps {
            let pair = base.annealed_model(t)?;
            let estimate = match args.n {
                0 => None,
                n => Some(estimate(&pair, args.features, n, args.common.seed, knn)?),
            };
            rows.push(AnnealRow {
                pair: i,
                t,
                exact_tv: exact_tv(&pair),
                l_star: exact_optimal_error_rate(&pair),
                estimate,
            });
        }
    }
    emit_json(
        args.common.out.as_deref(),
        &AnnealReport {
            mode: Mode::AnnealSweep,
            features: feature_name(args.features),
            n: args.n,
            k: knn.k,
            rows,
        },
    )
}

pub fn run(args: &SynthArgs) -> Outcome {
    let pairs = load_pairs(args)?;
    let knn = KnnConfig::with_k(args.common.k);
    match args.mode {
        Mode::Convergence => convergence(args, &pairs, &knn),
        Mode::Bounds => bounds(args, &pairs),
        Mode::AnnealSweep => anneal_sweep(args, &pairs, &knn),
    }
}
