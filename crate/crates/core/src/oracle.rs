// SPDX-License-Identifier: Apache-2.0

//! Ground truth for finite, fully known (p_human, p_model) pairs.
//!
//! Total variation, the optimal discriminator error and errors under coarser
//! feature maps are enumerated exactly. Probabilities are `f64` values, which
//! are dyadic rationals, so sums and differences are carried out in exact
//! rational arithmetic and rounded only on the way out. The `*_ratio`
//! functions expose the unrounded values.

use std::collections::{BTreeMap, HashMap, HashSet};

use num::{BigRational, Signed, ToPrimitive, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{Label, LabeledPoint};
use crate::dataset::{EvalDataset, EvaluatedExample, Origin, MAX_SCORE, MIN_SCORE};
use crate::error::{Error, Result};
use crate::features::opt_features;

/// Tolerance on probability and prior sums.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Probabilities below this are floored before taking logs, so outcomes the
/// model (or reference) never produces still get a finite log-probability.
pub const MIN_PROB: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} outcomes but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = support.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::InvalidDistribution(format!(
                "duplicate outcome {dup:?}"
            )));
        }
        if let Some(&p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidProbability(p));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(DiscreteDistribution { support, probs })
    }

    /// Outcomes named `y0, y1, ...`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).map(|i| format!("y{i}")).collect();
        Self::new(support, probs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.probs)
            .expect("validated distribution")
            .sample(rng)
    }
}

/// Conditional distributions for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDistributions {
    pub context_id: String,
    pub prior: f64,
    pub p_human: DiscreteDistribution,
    pub p_model: DiscreteDistribution,
}

/// A prior over contexts plus reference and model conditionals on a shared
/// support per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PairWire", into = "PairWire")]
pub struct DiscretePair {
    contexts: Vec<ContextDistributions>,
}

impl DiscretePair {
    pub fn new(contexts: Vec<ContextDistributions>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::InvalidDistribution("no contexts".into()));
        }
        let mut seen = HashSet::new();
        for c in &contexts {
            if !seen.insert(c.context_id.as_str()) {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate context {:?}",
                    c.context_id
                )));
            }
            if !c.prior.is_finite() || c.prior < 0.0 {
                return Err(Error::InvalidProbability(c.prior));
            }
            if c.p_human.support != c.p_model.support {
                return Err(Error::InvalidDistribution(format!(
                    "context {:?}: p_human and p_model have different supports",
                    c.context_id
                )));
            }
        }
        let total: f64 = contexts.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("priors sum to {total}")));
        }
        Ok(DiscretePair { contexts })
    }

    /// A single context with prior 1.
    pub fn single(p_human: DiscreteDistribution, p_model: DiscreteDistribution) -> Result<Self> {
        Self::new(vec![ContextDistributions {
            context_id: "x0".into(),
            prior: 1.0,
            p_human,
            p_model,
        }])
    }

    pub fn contexts(&self) -> &[ContextDistributions] {
        &self.contexts
    }

    /// The same reference distribution with the model replaced by the
    /// reference annealed at temperature `t`.
    pub fn annealed_model(&self, t: f64) -> Result<Self> {
        let contexts = self
            .contexts
            .iter()
            .map(|c| {
                Ok(ContextDistributions {
                    p_model: anneal(&c.p_human, t)?,
                    ..c.clone()
                })
            })
            .collect::<Result<_>>()?;
        Self::new(contexts)
    }

    /// Every (context, outcome) with nonzero mass under either side, with
    /// masses renormalized exactly so that each side totals 1.
    fn realized(&self) -> Vec<Atom> {
        let prior_total = self
            .contexts
            .iter()
            .fold(BigRational::zero(), |acc, c| acc + ratio(c.prior));
        let normalized = |probs: &[f64]| -> Vec<BigRational> {
            let total = probs
                .iter()
                .fold(BigRational::zero(), |acc, &p| acc + ratio(p));
            probs.iter().map(|&p| ratio(p) / &total).collect()
        };
        let mut atoms = Vec::new();
        for c in &self.contexts {
            if c.prior <= 0.0 {
                continue;
            }
            let prior = ratio(c.prior) / &prior_total;
            let (hs, ms) = (normalized(&c.p_human.probs), normalized(&c.p_model.probs));
            for (i, (h, m)) in hs.into_iter().zip(ms).enumerate() {
                let (p_human, p_model) = (c.p_human.probs[i], c.p_model.probs[i]);
                if p_human > 0.0 || p_model > 0.0 {
                    atoms.push(Atom {
                        p_human,
                        p_model,
                        mass_human: &prior * h,
                        mass_model: &prior * m,
                    });
                }
            }
        }
        atoms
    }
}

/// One realized (context, outcome).
struct Atom {
    p_human: f64,
    p_model: f64,
    /// P(x) p_human(y|x), exact.
    mass_human: BigRational,
    /// P(x) p_model(y|x), exact.
    mass_model: BigRational,
}

impl Atom {
    /// The optimal classifier predicts reference only when p_human is
    /// strictly larger; equal probabilities predict model.
    fn optimal_label(&self) -> Label {
        if self.p_human > self.p_model {
            Label::Reference
        } else {
            Label::Model
        }
    }
}

fn ratio(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite probability")
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("bounded rational")
}

#[derive(Serialize, Deserialize)]
struct PairWire {
    contexts: Vec<ContextWire>,
}

#[derive(Serialize, Deserialize)]
struct ContextWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_id: Option<String>,
    prior: f64,
    support: Vec<OutcomeId>,
    p_human: Vec<f64>,
    p_model: Vec<f64>,
}

/// Outcome ids may be written as strings or integers.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OutcomeId {
    Int(i64),
    Str(String),
}

impl From<OutcomeId> for String {
    fn from(id: OutcomeId) -> String {
        match id {
            OutcomeId::Int(i) => i.to_string(),
            OutcomeId::Str(s) => s,
        }
    }
}

impl TryFrom<PairWire> for DiscretePair {
    type Error = Error;

    fn try_from(wire: PairWire) -> Result<Self> {
        let contexts = wire
            .contexts
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let support: Vec<String> = c.support.into_iter().map(String::from).collect();
                Ok(ContextDistributions {
                    context_id: c.context_id.unwrap_or_else(|| format!("x{i}")),
                    prior: c.prior,
                    p_human: DiscreteDistribution::new(support.clone(), c.p_human)?,
                    p_model: DiscreteDistribution::new(support, c.p_model)?,
                })
            })
            .collect::<Result<_>>()?;
        DiscretePair::new(contexts)
    }
}

impl From<DiscretePair> for PairWire {
    fn from(pair: DiscretePair) -> Self {
        PairWire {
            contexts: pair
                .contexts
                .into_iter()
                .map(|c| ContextWire {
                    context_id: Some(c.context_id),
                    prior: c.prior,
                    support: c.p_human.support.into_iter().map(OutcomeId::Str).collect(),
                    p_human: c.p_human.probs,
                    p_model: c.p_model.probs,
                })
                .collect(),
        }
    }
}

/// Σ_x P(x) · ½ Σ_y |p_model(y|x) − p_human(y|x)|, unrounded.
///
/// Probabilities are renormalized exactly first, absorbing the rounding
/// slack allowed by [`NORMALIZATION_TOLERANCE`].
pub fn exact_tv_ratio(pair: &DiscretePair) -> BigRational {
    let half = BigRational::new(1.into(), 2.into());
    pair.realized()
        .into_iter()
        .fold(BigRational::zero(), |acc, atom| {
            acc + (atom.mass_model - atom.mass_human).abs() * &half
        })
}

/// Total variation distance averaged over the context prior.
pub fn exact_tv(pair: &DiscretePair) -> f64 {
    to_f64(&exact_tv_ratio(pair))
}

/// Twice the Bayes error of telling reference from model samples with equal
/// class priors: `1 − exact_tv`.
pub fn exact_optimal_error_rate(pair: &DiscretePair) -> f64 {
    1.0 - exact_tv(pair)
}

/// The optimal error computed directly from the Bayes rule, as
/// Σ_x P(x) Σ_y min(p_human, p_model), without going through the total
/// variation.
pub fn exact_optimal_error_ratio(pair: &DiscretePair) -> BigRational {
    pair.realized()
        .into_iter()
        .fold(BigRational::zero(), |acc, atom| {
            acc + atom.mass_human.min(atom.mass_model)
        })
}

/// Sharpens (t < 1) or flattens (t > 1) a distribution: p_i^{1/t}, normalized.
/// Zero-probability outcomes stay at zero; t = 1 returns the input unchanged.
pub fn anneal(dist: &DiscreteDistribution, t: f64) -> Result<DiscreteDistribution> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidTemperature(t));
    }
    if t == 1.0 {
        return Ok(dist.clone());
    }
    // log space keeps p^{1/t} representable for small t
    let max_log = dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dist
        .probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((p.ln() - max_log) / t).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.iter().map(|w| w / total).collect();
    DiscreteDistribution::new(dist.support.clone(), probs)
}

/// Simulated crowd: each rating is
/// `clamp(slope · ln p_human(y|x) + intercept + N(0, noise_sd²), 0, 5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterModel {
    pub slope: f64,
    pub intercept: f64,
    pub noise_sd: f64,
    pub n_raters: usize,
}

impl Default for RaterModel {
    fn default() -> Self {
        RaterModel {
            slope: 0.3,
            intercept: 4.5,
            noise_sd: 0.75,
            n_raters: 20,
        }
    }
}

impl RaterModel {
    fn validate(&self) -> Result<()> {
        if self.n_raters == 0 {
            return Err(Error::InvalidRaterModel(
                "n_raters must be at least 1".into(),
            ));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidRaterModel(format!(
                "noise_sd {} must be finite and non-negative",
                self.noise_sd
            )));
        }
        if !(self.slope.is_finite() && self.intercept.is_finite()) {
            return Err(Error::InvalidRaterModel(
                "slope and intercept must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One context draw and the reference and model outcomes drawn for it.
struct Draw<'a> {
    context: &'a ContextDistributions,
    reference: usize,
    model: usize,
}

fn draw<'a, R: Rng>(
    pair: &'a DiscretePair,
    contexts: &WeightedIndex<f64>,
    rng: &mut R,
) -> Draw<'a> {
    let context = &pair.contexts[contexts.sample(rng)];
    let reference = context.p_human.sample(rng);
    let model = context.p_model.sample(rng);
    Draw {
        context,
        reference,
        model,
    }
}

fn context_index(pair: &DiscretePair) -> WeightedIndex<f64> {
    WeightedIndex::new(pair.contexts.iter().map(|c| c.prior)).expect("validated priors")
}

/// Draws `n_contexts` context rows, each with one reference and one model
/// output, and simulates ratings with `raters`. Outputs are single-token
/// atoms named by their outcome id; `log_p_model` is exact (floored at
/// [`MIN_PROB`]). Bit-reproducible for a given seed.
pub fn sample_eval_dataset(
    pair: &DiscretePair,
    n_contexts: usize,
    raters: &RaterModel,
    seed: u64,
) -> Result<EvalDataset> {
    raters.validate()?;
    if n_contexts == 0 {
        return Err(Error::EmptyDataset);
    }
    let noise =
        Normal::new(0.0, raters.noise_sd).map_err(|e| Error::InvalidRaterModel(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = context_index(pair);

    let mut examples = Vec::with_capacity(2 * n_contexts);
    for i in 0..n_contexts {
        let d = draw(pair, &contexts, &mut rng);
        for (origin, outcome) in [(Origin::Reference, d.reference), (Origin::Model, d.model)] {
            let p_human = d.context.p_human.probs[outcome].max(MIN_PROB);
            let p_model = d.context.p_model.probs[outcome].max(MIN_PROB);
            let ratings = (0..raters.n_raters)
                .map(|_| {
                    let score =
                        raters.slope * p_human.ln() + raters.intercept + noise.sample(&mut rng);
                    score.clamp(MIN_SCORE, MAX_SCORE)
                })
                .collect();
            let tag = match origin {
                Origin::Reference => "ref",
                Origin::Model => "model",
            };
            examples.push(EvaluatedExample {
                example_id: format!("{i}-{tag}"),
                context: d.context.context_id.clone(),
                output_text: d.context.p_human.support[outcome].clone(),
                origin,
                log_p_model: p_model.ln(),
                ratings,
                rater_ids: None,
                token_count: 1,
            });
        }
    }
    EvalDataset::new(examples)
}

/// Draws `n` reference and `n` model outputs (interleaved, reference first)
/// and labels them with their exact `[p_human, p_model]` features.
pub fn sample_opt_points(pair: &DiscretePair, n: usize, seed: u64) -> Result<Vec<LabeledPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = context_index(pair);
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        let d = draw(pair, &contexts, &mut rng);
        for (label, outcome, tag) in [
            (Label::Reference, d.reference, "ref"),
            (Label::Model, d.model, "model"),
        ] {
            let features = opt_features(
                d.context.p_human.probs[outcome],
                d.context.p_model.probs[outcome],
            )?;
            points.push(LabeledPoint::new(features, label, format!("{i}-{tag}")));
        }
    }
    Ok(points)
}

/// Dirichlet(1, ..., 1) draw of the given size.
fn flat_dirichlet<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..size).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// Random pair: flat-Dirichlet priors over `n_contexts` contexts and
/// independent flat-Dirichlet conditionals on supports of a size drawn
/// uniformly from `support_sizes`.
pub fn random_pair<R: Rng>(
    rng: &mut R,
    n_contexts: usize,
    support_sizes: std::ops::RangeInclusive<usize>,
) -> DiscretePair {
    let priors = flat_dirichlet(rng, n_contexts);
    let contexts = priors
        .into_iter()
        .enumerate()
        .map(|(i, prior)| {
            let size = rng.random_range(support_sizes.clone());
            ContextDistributions {
                context_id: format!("x{i}"),
                prior,
                p_human: DiscreteDistribution::from_probs(flat_dirichlet(rng, size))
                    .expect("normalized draw"),
                p_model: DiscreteDistribution::from_probs(flat_dirichlet(rng, size))
                    .expect("normalized draw"),
            }
        })
        .collect();
    DiscretePair::new(contexts).expect("normalized priors")
}

/// `count` random pairs, item `i` generated from seed `seed + i`.
pub fn random_pairs(
    count: usize,
    seed: u64,
    n_contexts: usize,
    support_sizes: std::ops::RangeInclusive<usize>,
) -> Vec<DiscretePair> {
    (0..count as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            random_pair(&mut rng, n_contexts, support_sizes.clone())
        })
        .collect()
}

/// Identifier of a quantizer cell.
pub type Cell = (u64, u64);

/// A feature map that depends on an outcome only through
/// `(p_human, p_model)`, with finitely many values.
pub trait FeatureQuantizer {
    /// The cell for a realized point, or `None` if the quantizer does not
    /// cover it.
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell>;
}

impl<F> FeatureQuantizer for F
where
    F: Fn(f64, f64) -> Option<Cell>,
{
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell> {
        self(p_human, p_model)
    }
}

fn value_bits(x: f64) -> u64 {
    // fold -0.0 into 0.0
    (x + 0.0).to_bits()
}

/// One cell per distinct `(p_human, p_model)` value.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityQuantizer;

impl FeatureQuantizer for IdentityQuantizer {
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell> {
        Some((value_bits(p_human), value_bits(p_model)))
    }
}

/// Everything in one cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantQuantizer;

impl FeatureQuantizer for ConstantQuantizer {
    fn cell(&self, _: f64, _: f64) -> Option<Cell> {
        Some((0, 0))
    }
}

/// Three cells by the sign of `p_human − p_model`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignQuantizer;

impl FeatureQuantizer for SignQuantizer {
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell> {
        let sign = match p_human.partial_cmp(&p_model)? {
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => 1,
            std::cmp::Ordering::Greater => 2,
        };
        Some((sign, 0))
    }
}

/// Rounds each probability down to one of `bins` equal-width cells on [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct GridQuantizer {
    pub human_bins: u64,
    pub model_bins: u64,
}

impl FeatureQuantizer for GridQuantizer {
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell> {
        let bin = |p: f64, bins: u64| ((p * bins as f64) as u64).min(bins.saturating_sub(1));
        Some((bin(p_human, self.human_bins), bin(p_model, self.model_bins)))
    }
}

/// Identity on the image of `(p_human, p_model)` under a map.
pub struct MappedQuantizer<F>(pub F);

impl<F: Fn(f64, f64) -> (f64, f64)> FeatureQuantizer for MappedQuantizer<F> {
    fn cell(&self, p_human: f64, p_model: f64) -> Option<Cell> {
        let (a, b) = (self.0)(p_human, p_model);
        Some((value_bits(a), value_bits(b)))
    }
}

fn cell_of<Q: FeatureQuantizer + ?Sized>(q: &Q, atom: &Atom) -> Result<Cell> {
    q.cell(atom.p_human, atom.p_model)
        .ok_or(Error::NonTotalQuantizer {
            p_human: atom.p_human,
            p_model: atom.p_model,
        })
}

/// Optimal error when the discriminator only sees the quantizer cell,
/// unrounded: Σ_cells min(reference mass, model mass).
pub fn exact_feature_error_ratio<Q: FeatureQuantizer + ?Sized>(
    pair: &DiscretePair,
    quantizer: &Q,
) -> Result<BigRational> {
    let mut cells: BTreeMap<Cell, (BigRational, BigRational)> = BTreeMap::new();
    for atom in pair.realized() {
        let entry = cells
            .entry(cell_of(quantizer, &atom)?)
            .or_insert_with(|| (BigRational::zero(), BigRational::zero()));
        entry.0 += &atom.mass_human;
        entry.1 += &atom.mass_model;
    }
    Ok(cells
        .into_values()
        .fold(BigRational::zero(), |acc, (h, m)| acc + h.min(m)))
}

pub fn exact_feature_error<Q: FeatureQuantizer + ?Sized>(
    pair: &DiscretePair,
    quantizer: &Q,
) -> Result<f64> {
    Ok(to_f64(&exact_feature_error_ratio(pair, quantizer)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub l_star: f64,
    pub l_phi: f64,
    /// I(Z_opt; φ_opt | φ) in bits.
    pub mutual_info_bits: f64,
    pub upper_bound: f64,
    pub holds: bool,
}

/// Slack allowed on the upper bound for rounding in the entropy terms.
const BOUND_TOLERANCE: f64 = 1e-12;

fn binary_entropy_bits(p1: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    [p1 / total, (total - p1) / total]
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// H(Z_opt | key) in bits, from per-key (mass of Z_opt = reference, total).
fn conditional_entropy_bits<K>(groups: &HashMap<K, (f64, f64)>) -> f64 {
    groups
        .values()
        .map(|&(ref_mass, total)| total * binary_entropy_bits(ref_mass, total))
        .sum()
}

/// Checks `L* ≤ L(φ) ≤ L* + 2(1 − 2^{−I})` with I = I(Z_opt; φ_opt | φ),
/// enumerating the joint law of (Z_opt, φ_opt, φ) under the balanced
/// reference/model mixture.
pub fn check_approximation_bound<Q: FeatureQuantizer + ?Sized>(
    pair: &DiscretePair,
    quantizer: &Q,
) -> Result<BoundCheck> {
    let l_star_exact = exact_optimal_error_ratio(pair);
    let l_phi_exact = exact_feature_error_ratio(pair, quantizer)?;

    let half = BigRational::new(1.into(), 2.into());
    let mut by_cell: HashMap<Cell, (f64, f64)> = HashMap::new();
    let mut by_cell_and_opt: HashMap<(Cell, Cell), (f64, f64)> = HashMap::new();
    for atom in pair.realized() {
        let weight = to_f64(&((&atom.mass_human + &atom.mass_model) * &half));
        let z_ref = if atom.optimal_label() == Label::Reference {
            weight
        } else {
            0.0
        };
        let cell = cell_of(quantizer, &atom)?;
        let opt = (value_bits(atom.p_human), value_bits(atom.p_model));
        for entry in [
            by_cell.entry(cell).or_default(),
            by_cell_and_opt.entry((cell, opt)).or_default(),
        ] {
            entry.0 += z_ref;
            entry.1 += weight;
        }
    }
    let info =
        (conditional_entropy_bits(&by_cell) - conditional_entropy_bits(&by_cell_and_opt)).max(0.0);

    let l_star = to_f64(&l_star_exact);
    let l_phi = to_f64(&l_phi_exact);
    let upper_bound = l_star + 2.0 * (1.0 - (-info).exp2());
    Ok(BoundCheck {
        l_star,
        l_phi,
        mutual_info_bits: info,
        upper_bound,
        holds: l_star_exact <= l_phi_exact && l_phi <= upper_bound + BOUND_TOLERANCE,
    })
}

/// Checks that a map of `(p_human, p_model)` that is injective on the
/// realized values loses nothing: the optimal error under the mapped
/// features equals the optimal error, exactly.
pub fn check_invertible_invariance<F>(pair: &DiscretePair, map: F) -> Result<bool>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let mut images: HashMap<Cell, (f64, f64)> = HashMap::new();
    for atom in pair.realized() {
        let (a, b) = map(atom.p_human, atom.p_model);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite(if a.is_finite() { b } else { a }));
        }
        let image = (value_bits(a), value_bits(b));
        let source = (atom.p_human, atom.p_model);
        match images.get(&image) {
            Some(&prev)
                if value_bits(prev.0) != value_bits(source.0)
                    || value_bits(prev.1) != value_bits(source.1) =>
            {
                return Err(Error::NotInjective(prev.0, prev.1, source.0, source.1));
            }
            Some(_) => {}
            None => {
                images.insert(image, source);
            }
        }
    }
    let mapped = exact_feature_error_ratio(pair, &MappedQuantizer(map))?;
    Ok(mapped == exact_optimal_error_ratio(pair))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Uniform reference against (0.4, 0.3, 0.2, 0.1).
    pub(crate) fn tv_02_pair() -> DiscretePair {
        DiscretePair::single(
            DiscreteDistribution::uniform(4).unwrap(),
            DiscreteDistribution::from_probs(vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
        )
        .unwrap()
    }

    fn identical_pair() -> DiscretePair {
        let d = DiscreteDistribution::from_probs(vec![0.5, 0.3, 0.2]).unwrap();
        DiscretePair::single(d.clone(), d).unwrap()
    }

    fn disjoint_pair() -> DiscretePair {
        DiscretePair::single(
            DiscreteDistribution::from_probs(vec![0.6, 0.4, 0.0, 0.0]).unwrap(),
            DiscreteDistribution::from_probs(vec![0.0, 0.0, 0.5, 0.5]).unwrap(),
        )
        .unwrap()
    }

    /// Hand summation over outcomes, independent of the rational path.
    fn tv_by_hand(h: &[f64], m: &[f64]) -> f64 {
        0.5 * h.iter().zip(m).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(exact_tv(&identical_pair()), 0.0);
        assert_eq!(exact_tv(&disjoint_pair()), 1.0);
        let tv = exact_tv(&tv_02_pair());
        assert!((tv - tv_by_hand(&[0.25; 4], &[0.4, 0.3, 0.2, 0.1])).abs() < 1e-15);
        assert!((tv - 0.2).abs() < 1e-15);
    }

    #[test]
    fn optimal_error_examples() {
        assert_eq!(exact_optimal_error_rate(&identical_pair()), 1.0);
        assert_eq!(exact_optimal_error_rate(&disjoint_pair()), 0.0);
        assert!((exact_optimal_error_rate(&tv_02_pair()) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn anneal_examples() {
        let u = DiscreteDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        for t in [0.1, 0.5, 0.7, 2.0] {
            assert_eq!(anneal(&u, t).unwrap().probs(), &[0.5, 0.5]);
        }
        let d = DiscreteDistribution::from_probs(vec![0.9, 0.1]).unwrap();
        let a = anneal(&d, 0.5).unwrap();
        assert!((a.probs()[0] - 0.81 / 0.82).abs() < 1e-12);
        assert!((a.probs()[1] - 0.01 / 0.82).abs() < 1e-12);
        assert_eq!(anneal(&d, 1.0).unwrap(), d);
        assert!(matches!(anneal(&d, 0.0), Err(Error::InvalidTemperature(_))));
        assert!(matches!(
            anneal(&d, -1.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn anneal_keeps_zeros_and_handles_tiny_temperatures() {
        let d = DiscreteDistribution::from_probs(vec![0.7, 0.0, 0.3]).unwrap();
        let a = anneal(&d, 0.01).unwrap();
        assert_eq!(a.probs()[1], 0.0);
        assert!((a.probs()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_raters() {
        let raters = RaterModel {
            slope: 0.0,
            intercept: 3.0,
            noise_sd: 0.0,
            n_raters: 5,
        };
        let ds = sample_eval_dataset(&tv_02_pair(), 50, &raters, 7).unwrap();
        assert_eq!(ds.n_contexts(), 50);
        assert!(ds.examples().iter().all(|e| e.ratings == vec![3.0; 5]));
    }

    #[test]
    fn sampling_is_reproducible() {
        let raters = RaterModel::default();
        let a = sample_eval_dataset(&tv_02_pair(), 40, &raters, 11).unwrap();
        let b = sample_eval_dataset(&tv_02_pair(), 40, &raters, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_eval_dataset(&tv_02_pair(), 40, &raters, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_rater_model() {
        let bad = RaterModel {
            n_raters: 0,
            ..RaterModel::default()
        };
        assert!(matches!(
            sample_eval_dataset(&tv_02_pair(), 10, &bad, 0),
            Err(Error::InvalidRaterModel(_))
        ));
        let bad = RaterModel {
            noise_sd: -1.0,
            ..RaterModel::default()
        };
        assert!(sample_eval_dataset(&tv_02_pair(), 10, &bad, 0).is_err());
    }

    #[test]
    fn feature_error_examples() {
        let pair = tv_02_pair();
        assert_eq!(
            exact_feature_error_ratio(&pair, &IdentityQuantizer).unwrap(),
            exact_optimal_error_ratio(&pair)
        );
        assert_eq!(exact_feature_error(&pair, &ConstantQuantizer).unwrap(), 1.0);
        assert!((exact_feature_error(&pair, &SignQuantizer).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_total_quantizer_rejected() {
        let partial = |h: f64, _m: f64| (h < 0.3).then_some((0, 0));
        let pair = DiscretePair::single(
            DiscreteDistribution::from_probs(vec![0.2, 0.8]).unwrap(),
            DiscreteDistribution::from_probs(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            exact_feature_error(&pair, &partial),
            Err(Error::NonTotalQuantizer { .. })
        ));
    }

    #[test]
    fn bound_examples() {
        let pair = tv_02_pair();
        let id = check_approximation_bound(&pair, &IdentityQuantizer).unwrap();
        assert_eq!(id.mutual_info_bits, 0.0);
        assert_eq!(id.l_phi, id.l_star);
        assert_eq!(id.upper_bound, id.l_star);
        assert!(id.holds);

        let c = check_approximation_bound(&pair, &ConstantQuantizer).unwrap();
        assert_eq!(c.l_phi, 1.0);
        assert!(c.holds);
        // Z_opt = reference on the outcomes where 0.25 beats 0.2 and 0.1:
        // mixture mass ½(0.25 + 0.2) + ½(0.25 + 0.1) = 0.4
        let h = -(0.4f64 * 0.4f64.log2() + 0.6 * 0.6f64.log2());
        assert!((c.mutual_info_bits - h).abs() < 1e-12);
        assert!((c.upper_bound - (0.8 + 2.0 * (1.0 - (-h).exp2()))).abs() < 1e-12);
    }

    #[test]
    fn invertible_maps() {
        let pair = tv_02_pair();
        assert!(check_invertible_invariance(&pair, |u, v| (u.exp(), 2.0 * v + 1.0)).unwrap());
        assert!(check_invertible_invariance(&pair, |u, v| (v, u)).unwrap());
        // (0.25, 0.4) and (0.4, 0.25) both map to 0.65
        let swapped = DiscretePair::single(
            DiscreteDistribution::from_probs(vec![0.25, 0.4, 0.35]).unwrap(),
            DiscreteDistribution::from_probs(vec![0.4, 0.25, 0.35]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            check_invertible_invariance(&swapped, |u, v| (u + v, u + v)),
            Err(Error::NotInjective(..))
        ));
    }

    #[test]
    fn pair_json_round_trip_and_integer_ids() {
        let json = r#"{"contexts":[{"prior":1.0,"support":[1,2,3,4],
            "p_human":[0.25,0.25,0.25,0.25],"p_model":[0.4,0.3,0.2,0.1]}]}"#;
        let pair: DiscretePair = serde_json::from_str(json).unwrap();
        assert_eq!(pair.contexts()[0].p_human.support(), &["1", "2", "3", "4"]);
        let back: DiscretePair =
            serde_json::from_str(&serde_json::to_string(&pair).unwrap()).unwrap();
        assert_eq!(pair, back);
        let bad = r#"{"contexts":[{"prior":0.5,"support":["a"],"p_human":[1.0],"p_model":[1.0]}]}"#;
        assert!(serde_json::from_str::<DiscretePair>(bad).is_err());
    }

    #[test]
    fn invalid_distributions() {
        assert!(DiscreteDistribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::from_probs(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec!["a".into(), "a".into()], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDistribution::from_probs(vec![]).is_err());
    }

    fn arb_pair() -> impl Strategy<Value = DiscretePair> {
        (any::<u64>(), 1usize..4).prop_map(|(seed, contexts)| {
            random_pair(&mut ChaCha8Rng::seed_from_u64(seed), contexts, 2..=10)
        })
    }

    proptest! {
        #[test]
        fn tv_identity_is_exact(pair in arb_pair()) {
            prop_assert_eq!(exact_tv(&pair) + exact_optimal_error_rate(&pair), 1.0);
            prop_assert_eq!(
                exact_tv_ratio(&pair) + exact_optimal_error_ratio(&pair),
                BigRational::from_integer(1.into())
            );
        }

        #[test]
        fn coarser_features_never_help(pair in arb_pair(), bins in 1u64..6) {
            let l_star = exact_optimal_error_ratio(&pair);
            let fine = exact_feature_error_ratio(&pair, &GridQuantizer { human_bins: 2 * bins, model_bins: 2 * bins }).unwrap();
            let coarse = exact_feature_error_ratio(&pair, &GridQuantizer { human_bins: bins, model_bins: bins }).unwrap();
            prop_assert!(l_star <= fine);
            // every coarse cell is a union of fine cells
            prop_assert!(fine <= coarse);
        }

        #[test]
        fn annealing_preserves_normalization(
            probs in prop::collection::vec(0.001f64..1.0, 2..10),
            t in 0.05f64..3.0,
        ) {
            let total: f64 = probs.iter().sum();
            let d = DiscreteDistribution::from_probs(probs.iter().map(|p| p / total).collect()).unwrap();
            let a = anneal(&d, t).unwrap();
            prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
