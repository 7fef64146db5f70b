//! Iterative ensemble filtering of a mixed dataset down to its expert trajectories.
//!
//! Each iteration bootstraps `K` subsets of the current positives, trains a
//! fresh classifier on each, scores every mixed trajectory, fits the adaptive
//! threshold to the pooled confidences and replaces the positive set by the
//! majority vote. The loop stops once memberships settle.

mod threshold;

pub use threshold::{fit_adaptive_threshold, fitted_range, local_minima, prominence, MIN_PROMINENCE, MIN_UPPER_FRACTION, ConfidenceHistogram, ThresholdFit, FALLBACK_THRESHOLD, GRID_STEP};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{train, ClassifierArch, ClassifierError, ExpertClassifier, LossKind, PuTrainConfig};
use crate::data::{classification_accuracy, Confusion, DataError, Dataset, MembershipPartition, StateActionPairs, Trajectory, TrajectoryId};
use crate::negatives::{generate_negatives, to_pairs, NegativeError, NegativeMixSpec, RawPairIndex};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("seed-positive set is empty")]
    EmptySeeds,
    #[error("mixed dataset is empty")]
    EmptyMix,
    #[error("trajectory {0} is empty")]
    EmptyTrajectory(TrajectoryId),
    #[error("iteration {iteration} identified no positive trajectories")]
    Collapse { iteration: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Negatives(#[from] NegativeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionVariant {
    /// Vote on the mean step probability.
    Mean,
    /// Vote on the summed log step probability.
    LogSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub ensemble_size: usize,
    pub train: PuTrainConfig,
    pub arch: ClassifierArch,
    pub poly_order: usize,
    pub histogram_bins: usize,
    /// Largest membership-change fraction that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed_fraction: f64,
    pub seed_floor: usize,
    /// Negatives (or unlabeled samples) per bootstrapped positive pair.
    pub negative_ratio: f64,
    pub decision: DecisionVariant,
    /// Keep seed trajectories in every bootstrap pool.
    pub pin_seeds: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 3,
            train: PuTrainConfig::default(),
            arch: ClassifierArch::default(),
            poly_order: 10,
            histogram_bins: 50,
            tolerance: 0.02,
            max_iterations: 10,
            seed_fraction: 0.004,
            seed_floor: 5,
            negative_ratio: 1.0,
            decision: DecisionVariant::Mean,
            pin_seeds: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: &str| Err(FilterError::Config(m.to_string()));
        if self.ensemble_size == 0 || self.ensemble_size.is_multiple_of(2) {
            return bad("ensemble size must be odd and >= 1");
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return bad("tolerance must lie in (0, 1)");
        }
        if self.poly_order < 2 {
            return bad("polynomial order must be >= 2");
        }
        if self.histogram_bins < 2 {
            return bad("histogram needs >= 2 bins");
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be >= 1");
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return bad("seed fraction must lie in (0, 1]");
        }
        if !(self.negative_ratio > 0.0 && self.negative_ratio.is_finite()) {
            return bad("negative ratio must be positive");
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Mean step probability of `classifier` over `trajectory`.
pub fn trajectory_confidence(classifier: &ExpertClassifier, trajectory: &Trajectory) -> Result<f64, FilterError> {
    Ok(trajectory_scores(classifier, trajectory)?.mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryScore {
    pub mean: f64,
    pub log_sum: f64,
}

impl TrajectoryScore {
    pub fn value(&self, variant: DecisionVariant) -> f64 {
        match variant {
            DecisionVariant::Mean => self.mean,
            DecisionVariant::LogSum => self.log_sum,
        }
    }
}

pub fn trajectory_scores(classifier: &ExpertClassifier, trajectory: &Trajectory) -> Result<TrajectoryScore, FilterError> {
    if trajectory.is_empty() {
        return Err(FilterError::EmptyTrajectory(trajectory.id()));
    }
    let p = classifier.predict_batch(trajectory.states().view(), trajectory.actions().view())?;
    let n = p.len() as f64;
    Ok(TrajectoryScore {
        mean: p.sum() / n,
        log_sum: p.iter().map(|v| v.ln()).sum(),
    })
}

/// True iff strictly more than half of `scores` reach `threshold`.
pub fn majority_vote(scores: &[f64], threshold: f64) -> bool {
    let votes = scores.iter().filter(|&&s| s >= threshold).count();
    2 * votes > scores.len()
}

/// Bagged classifiers combined by majority vote.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<ExpertClassifier>,
}

impl Ensemble {
    pub fn new(members: Vec<ExpertClassifier>) -> Result<Self, FilterError> {
        if members.is_empty() || members.len().is_multiple_of(2) {
            return Err(FilterError::Config("ensemble size must be odd and >= 1".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ExpertClassifier] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Majority decision for one trajectory. For [`DecisionVariant::LogSum`]
/// `threshold` is on the log scale.
pub fn ensemble_decide(
    ensemble: &Ensemble,
    trajectory: &Trajectory,
    threshold: f64,
    variant: DecisionVariant,
) -> Result<bool, FilterError> {
    let scores = ensemble
        .members
        .iter()
        .map(|m| Ok(trajectory_scores(m, trajectory)?.value(variant)))
        .collect::<Result<Vec<_>, FilterError>>()?;
    Ok(majority_vote(&scores, threshold))
}

/// Everything recorded about one filter iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub positives: usize,
    /// Confidence threshold on the probability scale.
    pub threshold: f64,
    pub fit: ThresholdFit,
    pub histogram: ConfidenceHistogram,
    pub confusion: Option<Confusion>,
    pub changes: usize,
    pub change_fraction: f64,
    /// Per-member mean loss per epoch.
    pub member_losses: Vec<Vec<f64>>,
    /// Positive ids after this iteration.
    pub positive_ids: BTreeSet<TrajectoryId>,
    /// Ensemble-mean confidence of every mixed trajectory, in dataset order.
    pub confidences: Vec<(TrajectoryId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub partition: MembershipPartition,
    pub iterations: Vec<IterationDiagnostics>,
    pub converged: bool,
}

/// Seed positives taken as the best-return trajectories of `mix`.
pub fn select_seeds(mix: &Dataset, config: &FilterConfig) -> Result<BTreeSet<TrajectoryId>, FilterError> {
    Ok(crate::data::top_fraction_by_return(mix, config.seed_fraction, config.seed_floor)?)
}

struct MemberJob<'a> {
    positives: &'a [&'a Trajectory],
    mix_pairs: &'a StateActionPairs,
    raw_index: &'a RawPairIndex,
    mix: &'a Dataset,
    config: &'a FilterConfig,
}

impl MemberJob<'_> {
    fn run(&self, seed: u64) -> Result<(Vec<TrajectoryScore>, Vec<f64>), FilterError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sd, ad) = (self.mix.state_dim(), self.mix.action_dim());
        let bag: Vec<&Trajectory> = (0..self.positives.len())
            .map(|_| self.positives[rng.gen_range(0..self.positives.len())])
            .collect();
        let bag_pairs = StateActionPairs::from_trajectories(bag.iter().copied(), sd, ad);
        let other_count = ((bag_pairs.len() as f64 * self.config.negative_ratio).round() as usize).max(1);
        let other = match self.config.train.loss {
            LossKind::Bce => {
                let spec = NegativeMixSpec::equal_split(other_count);
                let negatives = generate_negatives(
                    &bag_pairs,
                    self.mix_pairs,
                    self.raw_index,
                    &spec,
                    self.mix.state_bounds(),
                    self.mix.action_bounds(),
                    &mut rng,
                )?;
                to_pairs(&negatives, sd, ad)
            }
            LossKind::Unbiased | LossKind::NonNegative => {
                let rows: Vec<usize> = (0..other_count).map(|_| rng.gen_range(0..self.mix_pairs.len())).collect();
                StateActionPairs {
                    states: self.mix_pairs.states.select(Axis(0), &rows),
                    actions: self.mix_pairs.actions.select(Axis(0), &rows),
                }
            }
        };
        let mut classifier = ExpertClassifier::new(sd, ad, &self.config.arch, &mut rng);
        let losses = train(&mut classifier, &bag_pairs, &other, &self.config.train, &mut rng)?;
        let scores = self
            .mix
            .trajectories()
            .iter()
            .map(|t| trajectory_scores(&classifier, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((scores, losses))
    }
}

/// Runs the iterative filter on `mix` starting from `seeds`.
///
/// Seed trajectories need not belong to `mix`; the initial partition holds the
/// seed ids present in `mix`. Seed ids are left out of the threshold histogram
/// (unless nothing else remains) but are classified like every other trajectory. Ground truth, when given, maps every mixed id to
/// whether it is expert and fills the per-iteration confusion counts.
pub fn run_pubc_filter(
    mix: &Dataset,
    seeds: &[Trajectory],
    config: &FilterConfig,
    ground_truth: Option<&BTreeMap<TrajectoryId, bool>>,
    seed: u64,
) -> Result<FilterOutcome, FilterError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(FilterError::EmptySeeds);
    }
    if mix.is_empty() {
        return Err(FilterError::EmptyMix);
    }
    let (sd, ad) = (mix.state_dim(), mix.action_dim());
    if let Some(t) = seeds.iter().find(|t| t.state_dim() != sd || t.action_dim() != ad) {
        return Err(FilterError::Data(DataError::Trajectory {
            id: t.id(),
            message: "seed dimensions differ from the mixed dataset".into(),
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix_pairs = StateActionPairs::from_trajectories(mix.trajectories(), sd, ad);
    let seed_pairs = StateActionPairs::from_trajectories(seeds, sd, ad);
    let raw_index = RawPairIndex::new([&mix_pairs, &seed_pairs]);
    let all_ids = mix.ids();
    let seed_ids: BTreeSet<TrajectoryId> = seeds.iter().map(|t| t.id()).collect();
    let mut partition = MembershipPartition::new(&all_ids, &seed_ids, 0);
    let mut iterations = Vec::new();
    let mut converged = false;
    let n_mix = mix.len() as f64;

    for iteration in 1..=config.max_iterations {
        let mut positives: Vec<&Trajectory> = if iteration == 1 {
            seeds.iter().collect()
        } else {
            partition.positive.iter().map(|id| mix.get(*id).expect("partition ids come from mix")).collect()
        };
        if config.pin_seeds && iteration > 1 {
            positives.extend(seeds.iter().filter(|t| !partition.positive.contains(&t.id())));
        }
        let member_seeds: Vec<u64> = (0..config.ensemble_size).map(|_| rng.gen()).collect();
        let job = MemberJob {
            positives: &positives,
            mix_pairs: &mix_pairs,
            raw_index: &raw_index,
            mix,
            config,
        };
        let results = member_seeds
            .par_iter()
            .map(|&s| job.run(s))
            .collect::<Result<Vec<_>, _>>()?;
        let (scores, member_losses): (Vec<Vec<TrajectoryScore>>, Vec<Vec<f64>>) = results.into_iter().unzip();

        let k = scores.len() as f64;
        let pooled: Vec<f64> = (0..mix.len())
            .map(|j| match config.decision {
                DecisionVariant::Mean => scores.iter().map(|m| m[j].mean).sum::<f64>() / k,
                DecisionVariant::LogSum => {
                    let len = mix.trajectories()[j].len() as f64;
                    (scores.iter().map(|m| m[j].log_sum / len).sum::<f64>() / k).exp()
                }
            })
            .collect();
        let unseeded: Vec<f64> = mix
            .trajectories()
            .iter()
            .zip(&pooled)
            .filter(|(t, _)| !seed_ids.contains(&t.id()))
            .map(|(_, &c)| c)
            .collect();
        let fitted = if unseeded.is_empty() { &pooled } else { &unseeded };
        let (fit, histogram) = fit_adaptive_threshold(fitted, config.poly_order, config.histogram_bins)?;
        let threshold = fit.threshold;

        let mut new_positive = BTreeSet::new();
        for (j, t) in mix.trajectories().iter().enumerate() {
            let member_scores: Vec<f64> = scores.iter().map(|m| m[j].value(config.decision)).collect();
            let th = match config.decision {
                DecisionVariant::Mean => threshold,
                DecisionVariant::LogSum => t.len() as f64 * threshold.ln(),
            };
            if majority_vote(&member_scores, th) {
                new_positive.insert(t.id());
            }
        }
        if new_positive.is_empty() {
            return Err(FilterError::Collapse { iteration });
        }
        let next = MembershipPartition::new(&all_ids, &new_positive, iteration);
        let changes = next.changes_from(&partition);
        let change_fraction = changes as f64 / n_mix;
        let confusion = ground_truth.map(|gt| classification_accuracy(&next, gt)).transpose()?;
        iterations.push(IterationDiagnostics {
            iteration,
            positives: next.positive.len(),
            threshold,
            fit,
            histogram,
            confusion,
            changes,
            change_fraction,
            member_losses,
            positive_ids: next.positive.clone(),
            confidences: mix.trajectories().iter().map(|t| t.id()).zip(pooled.iter().copied()).collect(),
        });
        partition = next;
        if change_fraction <= config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(FilterOutcome {
        partition,
        iterations,
        converged,
    })
}

pub const HISTOGRAM_HEADER: &str = "bin_center,count,fitted_value";
pub const CONVERGENCE_HEADER: &str = "iteration,TP,FP,FN,TN,threshold,positives";

pub fn histogram_csv(diag: &IterationDiagnostics) -> String {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for (c, n) in diag.histogram.centers().into_iter().zip(&diag.histogram.counts) {
        let _ = writeln!(out, "{c},{n},{}", diag.fit.value(c));
    }
    out
}

/// One row per iteration; confusion columns stay empty without ground truth.
pub fn convergence_csv(iterations: &[IterationDiagnostics]) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for d in iterations {
        let counts = match d.confusion {
            Some(c) => format!("{},{},{},{}", c.tp, c.fp, c.fn_, c.tn),
            None => ",,,".to_string(),
        };
        let _ = writeln!(out, "{},{counts},{},{}", d.iteration, d.threshold, d.positives);
    }
    out
}

/// Parses a convergence CSV back into `(iteration, confusion?, threshold, positives)`.
pub fn parse_convergence_csv(text: &str) -> Result<Vec<(usize, Option<Confusion>, f64, usize)>, FilterError> {
    let mut lines = text.lines();
    if lines.next() != Some(CONVERGENCE_HEADER) {
        return Err(FilterError::Config("convergence CSV header mismatch".into()));
    }
    let bad = |line: &str| FilterError::Config(format!("malformed convergence row {line:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let confusion = if f[1..5].iter().all(|s| s.is_empty()) {
                None
            } else {
                let n: Vec<usize> = f[1..5]
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(line)))
                    .collect::<Result<_, _>>()?;
                Some(Confusion {
                    tp: n[0],
                    fp: n[1],
                    fn_: n[2],
                    tn: n[3],
                })
            };
            Ok((
                f[0].parse().map_err(|_| bad(line))?,
                confusion,
                f[5].parse().map_err(|_| bad(line))?,
                f[6].parse().map_err(|_| bad(line))?,
            ))
        })
        .collect()
}
