// SPDX-License-Identifier: Apache-2.0

//! Estimation of HUSE, a score for how distinguishable model-generated text
//! is from reference text when a k-nearest-neighbor classifier sees both
//! the model's length-normalized log-probability and the mean human
//! typicality judgment of each output.
//!
//! * [`dataset`] ingests and validates paired reference/model outputs.
//! * [`features`] maps examples to discriminator features and scales them.
//! * [`classifier`] computes leave-one-out k-NN error.
//! * [`metrics`] reports HUSE, HUSE-Q and HUSE-D, subsampling stability and
//!   the decision surface.
//! * [`oracle`] provides exactly known discrete distributions for checking
//!   the estimator against true total variation.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod oracle;

pub use classifier::{KnnConfig, Label, LabeledPoint, TiePolicy};
pub use dataset::{load_dataset, write_dataset, EvalDataset, EvaluatedExample, Format, Origin};
pub use error::{Error, Result};
pub use features::{FeatureSpec, FeatureVariant, FeatureVector, LengthNormalizer};
pub use metrics::{compute_huse, HuseReport, StabilityReport};
pub use oracle::{DiscreteDistribution, DiscretePair, RaterModel};
