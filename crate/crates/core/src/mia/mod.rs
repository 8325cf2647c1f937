//! Membership-inference auditing: per-example scores, the threshold attack
//! and the attacker-advantage metric.

mod experiment;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use experiment::{
    run_membership_experiment, DataDistribution, ExperimentResult, ExperimentSpec, IgnoringLearner,
    Learner, MemberScorer, NearestNeighborLearner, NeuralLearner,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LossKind, Model, EVAL_CHUNK};
use crate::rng::rng_from_seed;

/// How a model's output on one labelled example becomes a membership score.
/// Every kind is oriented so that larger means more member-like.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Negated per-example loss.
    #[default]
    NegLoss,
    /// Largest predicted class probability.
    MaxConfidence,
    /// Predicted probability of the true label.
    CorrectClassConfidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipScores {
    member_scores: Vec<f64>,
    nonmember_scores: Vec<f64>,
    score_kind: ScoreKind,
}

impl MembershipScores {
    pub fn new(
        member_scores: Vec<f64>,
        nonmember_scores: Vec<f64>,
        score_kind: ScoreKind,
    ) -> Result<Self> {
        if member_scores.is_empty() || nonmember_scores.is_empty() {
            return Err(Error::EmptyDataset(
                "membership scores need members and nonmembers".into(),
            ));
        }
        if member_scores
            .iter()
            .chain(&nonmember_scores)
            .any(|s| s.is_nan())
        {
            return Err(Error::NonFinite("membership score is NaN".into()));
        }
        Ok(MembershipScores {
            member_scores,
            nonmember_scores,
            score_kind,
        })
    }

    pub fn member_scores(&self) -> &[f64] {
        &self.member_scores
    }

    pub fn nonmember_scores(&self) -> &[f64] {
        &self.nonmember_scores
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    /// The same scores with the member and nonmember roles exchanged.
    pub fn swapped(&self) -> Self {
        MembershipScores {
            member_scores: self.nonmember_scores.clone(),
            nonmember_scores: self.member_scores.clone(),
            score_kind: self.score_kind,
        }
    }
}

/// Scores every row of `data` under `model`.
pub fn score_examples(
    model: &Model,
    data: &Dataset,
    loss: LossKind,
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("cannot score an empty dataset".into()));
    }
    let logits = model.forward_chunked(data.features(), EVAL_CHUNK)?;
    scores_from_logits(loss, logits.data(), model.output_dim(), data.labels(), kind)
}

/// Scores rows from precomputed logits (`labels.len()` rows of `width`).
pub fn scores_from_logits(
    loss: LossKind,
    logits: &[f64],
    width: usize,
    labels: &[usize],
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    loss.check_width(width)?;
    if logits.len() != labels.len() * width {
        return Err(Error::Shape(format!(
            "{} logits for {} rows of width {width}",
            logits.len(),
            labels.len()
        )));
    }
    let classes = loss.num_classes(width);
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes,
        });
    }
    Ok(match kind {
        ScoreKind::NegLoss => {
            let (losses, _) = loss.evaluate(logits, width, labels)?;
            losses.into_iter().map(|l| -l).collect()
        }
        ScoreKind::MaxConfidence => loss
            .probabilities(logits, width)
            .into_iter()
            .map(|p| p.into_iter().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        ScoreKind::CorrectClassConfidence => loss
            .probabilities(logits, width)
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| p[y])
            .collect(),
    })
}

pub fn membership_scores(
    model: &Model,
    train_probe: &Dataset,
    holdout: &Dataset,
    loss: LossKind,
    kind: ScoreKind,
) -> Result<MembershipScores> {
    MembershipScores::new(
        score_examples(model, train_probe, loss, kind)?,
        score_examples(model, holdout, loss, kind)?,
        kind,
    )
}

/// Subsamples the larger of the two sets so both have the same size.
pub fn size_matched(members: &Dataset, nonmembers: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let (a, b) = size_matched_indices(members.len(), nonmembers.len(), seed);
    (members.subset(&a), nonmembers.subset(&b))
}

/// Row indices of a size-matched pair of probes: all rows of the smaller
/// side and a seeded random subset of the larger, both in ascending order.
pub fn size_matched_indices(
    members: usize,
    nonmembers: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let k = members.min(nonmembers);
    let pick = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        if n > k {
            idx.shuffle(&mut rng_from_seed(seed));
            idx.truncate(k);
            idx.sort_unstable();
        }
        idx
    };
    (pick(members), pick(nonmembers))
}

/// One point of the threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// `max (TPR − FPR)` as a fraction in `[0, 1]`.
    pub advantage: f64,
    #[serde(with = "extended_f64")]
    pub best_threshold: f64,
    /// Ascending thresholds, starting at `-inf` and ending at `+inf`.
    pub roc: Vec<RocPoint>,
    pub score_kind: ScoreKind,
}

/// Count of sorted values that are `>= t`.
fn at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

/// Predicts "member" iff score `>= t`, for every distinct observed score and
/// the two infinite sentinels. The best threshold maximizes `TPR − FPR`;
/// among ties the smallest finite threshold wins.
pub fn threshold_attack(scores: &MembershipScores) -> AttackResult {
    let mut members = scores.member_scores.clone();
    let mut nonmembers = scores.nonmember_scores.clone();
    members.sort_by(f64::total_cmp);
    nonmembers.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = members.iter().chain(&nonmembers).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.retain(|t| t.is_finite());

    let (m, n) = (members.len() as f64, nonmembers.len() as f64);
    let point = |t: f64| RocPoint {
        threshold: t,
        tpr: at_least(&members, t) as f64 / m,
        fpr: at_least(&nonmembers, t) as f64 / n,
    };
    let mut roc = Vec::with_capacity(thresholds.len() + 2);
    roc.push(point(f64::NEG_INFINITY));
    roc.extend(thresholds.iter().map(|&t| point(t)));
    roc.push(point(f64::INFINITY));

    let mut best = roc[roc.len() - 1];
    for p in roc[1..].iter().rev() {
        if p.tpr - p.fpr >= best.tpr - best.fpr {
            best = *p;
        }
    }
    AttackResult {
        advantage: (best.tpr - best.fpr).max(0.0),
        best_threshold: best.threshold,
        roc,
        score_kind: scores.score_kind,
    }
}

/// The attack's advantage on the percent scale.
pub fn attacker_advantage(result: &AttackResult) -> f64 {
    result.advantage * 100.0
}

/// Scores, sweeps and returns the attack against `model` using size-matched
/// member and nonmember probes.
pub fn audit_model(
    model: &Model,
    members: &Dataset,
    nonmembers: &Dataset,
    loss: LossKind,
    kind: ScoreKind,
    seed: u64,
) -> Result<AttackResult> {
    let (m, n) = size_matched(members, nonmembers, seed);
    Ok(threshold_attack(&membership_scores(
        model, &m, &n, loss, kind,
    )?))
}

/// JSON numbers cannot hold infinities; they are written as the strings
/// `"inf"` and `"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}
