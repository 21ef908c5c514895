// SPDX-License-Identifier: Apache-2.0

//! Feature maps into the discriminator space and unit-variance scaling.

use serde::{Deserialize, Serialize};

use crate::dataset::{hj, EvaluatedExample};
use crate::error::{Error, Result};

/// Which feature map to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    /// `[log p_model / length, HJ]`
    #[default]
    Huse,
    /// `[HJ]`
    HjOnly,
    /// `[p_human, p_model]`, only available for oracle data.
    Opt,
}

impl FeatureVariant {
    pub fn dim(self) -> usize {
        match self {
            FeatureVariant::HjOnly => 1,
            FeatureVariant::Huse | FeatureVariant::Opt => 2,
        }
    }
}

/// Denominator of the first HUSE feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalizer {
    /// Divide by the output's token count.
    #[default]
    TokenCount,
    /// Divide by the mean human judgment instead. Kept for sensitivity
    /// studies only.
    HumanJudgment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub variant: FeatureVariant,
    #[serde(default)]
    pub normalizer: LengthNormalizer,
}

impl FeatureSpec {
    pub const HUSE: FeatureSpec = FeatureSpec {
        variant: FeatureVariant::Huse,
        normalizer: LengthNormalizer::TokenCount,
    };
    pub const HJ: FeatureSpec = FeatureSpec {
        variant: FeatureVariant::HjOnly,
        normalizer: LengthNormalizer::TokenCount,
    };

    /// Maps a rated example. `Opt` has no meaning for rated examples and is
    /// reported as a precondition failure.
    pub fn apply(&self, example: &EvaluatedExample) -> Result<FeatureVector> {
        match self.variant {
            FeatureVariant::Huse => huse_features_with(example, self.normalizer),
            FeatureVariant::HjOnly => hj_features(example),
            FeatureVariant::Opt => Err(Error::Precondition(
                "opt features need exact probabilities and cannot be computed from rated examples"
                    .into(),
            )),
        }
    }
}

/// A point in feature space. All components are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(v));
        }
        Ok(FeatureVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// `[log_p_model / token_count, HJ]`.
pub fn huse_features(example: &EvaluatedExample) -> Result<FeatureVector> {
    huse_features_with(example, LengthNormalizer::TokenCount)
}

pub fn huse_features_with(
    example: &EvaluatedExample,
    normalizer: LengthNormalizer,
) -> Result<FeatureVector> {
    let judgment = hj(example)?;
    let denominator = match normalizer {
        LengthNormalizer::TokenCount => {
            if example.token_count == 0 {
                return Err(Error::InvalidExample {
                    example_id: example.example_id.clone(),
                    message: "token_count must be at least 1".into(),
                });
            }
            example.token_count as f64
        }
        LengthNormalizer::HumanJudgment => judgment,
    };
    FeatureVector::new(vec![example.log_p_model / denominator, judgment])
}

/// `[HJ]`.
pub fn hj_features(example: &EvaluatedExample) -> Result<FeatureVector> {
    FeatureVector::new(vec![hj(example)?])
}

/// `[p_human, p_model]`.
pub fn opt_features(p_human: f64, p_model: f64) -> Result<FeatureVector> {
    for p in [p_human, p_model] {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidProbability(p));
        }
    }
    FeatureVector::new(vec![p_human, p_model])
}

/// Per-dimension multipliers giving unit population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingProfile {
    factors: Vec<f64>,
}

impl ScalingProfile {
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector> {
        self.check_dim(v)?;
        FeatureVector::new(
            v.values
                .iter()
                .zip(&self.factors)
                .map(|(x, f)| x * f)
                .collect(),
        )
    }

    /// Maps scaled coordinates back to raw feature units.
    pub fn invert(&self, v: &FeatureVector) -> Result<FeatureVector> {
        self.check_dim(v)?;
        FeatureVector::new(
            v.values
                .iter()
                .zip(&self.factors)
                .map(|(x, f)| x / f)
                .collect(),
        )
    }

    fn check_dim(&self, v: &FeatureVector) -> Result<()> {
        if v.dim() != self.factors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.factors.len(),
                found: v.dim(),
            });
        }
        Ok(())
    }
}

/// Fits factors `1/sqrt(population variance)` per dimension. Constant
/// dimensions keep factor 1.
pub fn fit_scaling(rows: &[FeatureVector]) -> Result<ScalingProfile> {
    if rows.len() < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            found: rows.len(),
        });
    }
    let dim = rows[0].dim();
    if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let n = rows.len() as f64;
    let factors = (0..dim)
        .map(|d| {
            let first = rows[0][d];
            if rows.iter().all(|r| r[d] == first) {
                return 1.0;
            }
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            1.0 / var.sqrt()
        })
        .collect();
    Ok(ScalingProfile { factors })
}

/// Fits a profile on `rows` and returns the scaled rows with it.
pub fn scale_rows(rows: &[FeatureVector]) -> Result<(ScalingProfile, Vec<FeatureVector>)> {
    let profile = fit_scaling(rows)?;
    let scaled = rows
        .iter()
        .map(|r| profile.apply(r))
        .collect::<Result<_>>()?;
    Ok((profile, scaled))
}
