//! Monte Carlo membership experiment: train on `S ~ Dⁿ`, flip a fair bit,
//! challenge the adversary with a point from `S` (bit 0) or a fresh point
//! from `D` (bit 1), and record whether it guesses right.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{score_examples, threshold_attack, MembershipScores, ScoreKind};
use crate::data::{BlobDistribution, Dataset};
use crate::error::{Error, Result};
use crate::nn::{init_model, LossKind, Model, ModelSpec};
use crate::optim::{train, TrainConfig};
use crate::rng::{derive_seed, rng_from_seed, STREAM_INIT};

/// Source of i.i.d. labelled examples.
pub trait DataDistribution {
    fn sample(&self, n: usize, seed: u64) -> Result<Dataset>;
}

impl DataDistribution for BlobDistribution {
    fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        Ok(BlobDistribution::sample(self, n, seed))
    }
}

/// A trained artefact that scores examples, larger meaning more member-like.
pub trait MemberScorer {
    fn score(&self, data: &Dataset) -> Result<Vec<f64>>;
}

/// A training procedure `A` mapping a training set to a scorer.
pub trait Learner {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn MemberScorer>>;
}

/// Trains a neural network and scores with one of the [`ScoreKind`]s.
#[derive(Clone, Debug)]
pub struct NeuralLearner {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub loss: LossKind,
    pub score_kind: ScoreKind,
}

struct NeuralScorer {
    model: Model,
    loss: LossKind,
    kind: ScoreKind,
}

impl MemberScorer for NeuralScorer {
    fn score(&self, data: &Dataset) -> Result<Vec<f64>> {
        score_examples(&self.model, data, self.loss, self.kind)
    }
}

impl Learner for NeuralLearner {
    fn fit(&self, train_set: &Dataset, seed: u64) -> Result<Box<dyn MemberScorer>> {
        let model = init_model(&self.spec, derive_seed(seed, &[STREAM_INIT]))?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let (model, _) = train(model, train_set, train_set, self.loss, &cfg)?;
        Ok(Box::new(NeuralScorer {
            model,
            loss: self.loss,
            kind: self.score_kind,
        }))
    }
}

/// Ignores its training set: the score is the first feature of the point.
#[derive(Clone, Copy, Debug, Default)]
pub struct IgnoringLearner;

struct FirstFeature;

impl MemberScorer for FirstFeature {
    fn score(&self, data: &Dataset) -> Result<Vec<f64>> {
        Ok((0..data.len()).map(|i| data.features().row(i)[0]).collect())
    }
}

impl Learner for IgnoringLearner {
    fn fit(&self, _train: &Dataset, _seed: u64) -> Result<Box<dyn MemberScorer>> {
        Ok(Box::new(FirstFeature))
    }
}

/// Memorizes its training set; the score is minus the Euclidean distance to
/// the nearest stored point (zero exactly on members).
#[derive(Clone, Copy, Debug, Default)]
pub struct NearestNeighborLearner;

struct Memory(Dataset);

impl MemberScorer for Memory {
    fn score(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.input_shape() != self.0.input_shape() {
            return Err(Error::Shape(
                "query rows do not match the memorized rows".into(),
            ));
        }
        let stored = self.0.features();
        Ok((0..data.len())
            .map(|i| {
                let q = data.features().row(i);
                let best = (0..stored.rows())
                    .map(|j| {
                        stored
                            .row(j)
                            .iter()
                            .zip(q)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                -best.sqrt()
            })
            .collect())
    }
}

impl Learner for NearestNeighborLearner {
    fn fit(&self, train: &Dataset, _seed: u64) -> Result<Box<dyn MemberScorer>> {
        Ok(Box::new(Memory(train.clone())))
    }
}

pub struct ExperimentSpec<'a> {
    pub learner: &'a dyn Learner,
    pub distribution: &'a dyn DataDistribution,
    /// Training-set size.
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub trials: usize,
    /// Fraction of trials in which the adversary's guess was right.
    pub accuracy: f64,
    /// `2·accuracy − 1`.
    pub advantage: f64,
    /// Standard error of `advantage`.
    pub standard_error: f64,
    /// `TPR − FPR` over the trials; `None` if either bit value never came up.
    pub advantage_rates: Option<f64>,
    /// Whether the two estimates agree within two standard errors.
    pub forms_agree: bool,
    /// Decision threshold, calibrated on an independent shadow training run.
    pub threshold: f64,
    pub member_trials: usize,
    pub nonmember_trials: usize,
}

/// Runs the experiment. The adversary predicts "member" iff the challenge
/// point's score reaches a threshold picked by the threshold attack on a
/// shadow run (a separate `S' ~ Dⁿ` against `n` fresh points).
pub fn run_membership_experiment(spec: &ExperimentSpec<'_>) -> Result<ExperimentResult> {
    if spec.trials == 0 || spec.n == 0 {
        return Err(Error::InvalidConfig(
            "trials and n must be at least 1".into(),
        ));
    }
    let shadow_train = spec
        .distribution
        .sample(spec.n, derive_seed(spec.seed, &[0, 0]))?;
    let shadow_out = spec
        .distribution
        .sample(spec.n, derive_seed(spec.seed, &[0, 1]))?;
    let shadow = spec
        .learner
        .fit(&shadow_train, derive_seed(spec.seed, &[0, 2]))?;
    let calib = MembershipScores::new(
        shadow.score(&shadow_train)?,
        shadow.score(&shadow_out)?,
        ScoreKind::NegLoss,
    )?;
    let threshold = threshold_attack(&calib).best_threshold;

    let (mut correct, mut hits0, mut n0, mut hits1, mut n1) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    for t in 0..spec.trials as u64 {
        let s = spec
            .distribution
            .sample(spec.n, derive_seed(spec.seed, &[1, t, 0]))?;
        let scorer = spec.learner.fit(&s, derive_seed(spec.seed, &[1, t, 1]))?;
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[1, t, 2]));
        let b: bool = rng.random();
        let z = if b {
            spec.distribution
                .sample(1, derive_seed(spec.seed, &[1, t, 3]))?
        } else {
            s.subset(&[rng.random_range(0..s.len())])
        };
        let guess_member = scorer.score(&z)?[0] >= threshold;
        if b {
            n1 += 1;
            hits1 += usize::from(guess_member);
        } else {
            n0 += 1;
            hits0 += usize::from(guess_member);
        }
        correct += usize::from(guess_member != b);
    }
    let trials = spec.trials as f64;
    let accuracy = correct as f64 / trials;
    let advantage = 2.0 * accuracy - 1.0;
    let standard_error = 2.0 * (accuracy * (1.0 - accuracy) / trials).sqrt();
    let advantage_rates =
        (n0 > 0 && n1 > 0).then(|| hits0 as f64 / n0 as f64 - hits1 as f64 / n1 as f64);
    let forms_agree =
        advantage_rates.is_some_and(|r| (r - advantage).abs() <= 2.0 * standard_error + 1e-12);
    Ok(ExperimentResult {
        trials: spec.trials,
        accuracy,
        advantage,
        standard_error,
        advantage_rates,
        forms_agree,
        threshold,
        member_trials: n0,
        nonmember_trials: n1,
    })
}
