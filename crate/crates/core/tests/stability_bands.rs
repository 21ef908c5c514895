// SPDX-License-Identifier: Apache-2.0

use huse_core::metrics::{stability, RaterSampling, StabilityConfig};
use huse_core::oracle::{
    exact_optimal_error_rate, sample_eval_dataset, DiscreteDistribution, DiscretePair, RaterModel,
};
use huse_core::KnnConfig;

#[test]
fn band_shrinks_with_more_examples() {
    let pair = DiscretePair::single(
        DiscreteDistribution::uniform(4).unwrap(),
        DiscreteDistribution::from_probs(vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
    )
    .unwrap();
    assert!((exact_optimal_error_rate(&pair) - 0.8).abs() < 1e-12);

    let sizes = [25, 50, 100, 200];
    let mut spread = [0.0; 4];
    for seed in 0..20u64 {
        let ds = sample_eval_dataset(&pair, 400, &RaterModel::default(), seed).unwrap();
        for (slot, &n) in spread.iter_mut().zip(&sizes) {
            let config = StabilityConfig {
                n_examples: n,
                n_raters: 20,
                n_bootstrap: 100,
                seed: 1000 + seed,
                rater_sampling: RaterSampling::PerExample,
            };
            *slot += stability(&ds, &config, &KnnConfig::default())
                .unwrap()
                .spread()
                / 20.0;
        }
    }
    assert!(
        spread.windows(2).all(|w| w[0] > w[1]),
        "mean spread by size: {spread:?}"
    );
}
