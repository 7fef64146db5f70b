//! Trajectory-grouped datasets, their file format, and dataset-level metrics.
//!
//! A dataset file is JSON lines: a header record carrying the dimensions and
//! per-dimension bounds, followed by one record per trajectory with flat
//! row-major `states`, `actions` and `rewards` arrays.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const FORMAT_TAG: &str = "pubc-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {record} (line {line}): {message}")]
    Schema {
        record: usize,
        line: usize,
        message: String,
    },
    #[error("invalid trajectory {id}: {message}")]
    Trajectory { id: TrajectoryId, message: String },
    #[error("duplicate trajectory id {0}")]
    DuplicateId(TrajectoryId),
    #[error("dataset is empty")]
    Empty,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory id {0} is not covered by the ground truth")]
    UnknownId(TrajectoryId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryId(pub u64);

impl fmt::Display for TrajectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Inclusive per-dimension `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bounds(pub Vec<(f64, f64)>);

impl Bounds {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_valid(&self) -> bool {
        self.0
            .iter()
            .all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi)
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && v.iter().zip(&self.0).all(|(x, &(lo, hi))| *x >= lo && *x <= hi)
    }

    pub fn clip(&self, v: &mut [f64]) {
        for (x, &(lo, hi)) in v.iter_mut().zip(&self.0) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self(vec![(lo, hi); dim])
    }
}

/// One step of a trajectory, borrowed from its storage.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub state: ArrayView1<'a, f64>,
    pub action: ArrayView1<'a, f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: TrajectoryId,
    states: Array2<f64>,
    actions: Array2<f64>,
    rewards: Vec<f64>,
    ret: f64,
    source_label: Option<String>,
}

impl Trajectory {
    /// `states` is `T × S`, `actions` is `T × A`; the return is cached.
    pub fn new(
        id: TrajectoryId,
        states: Array2<f64>,
        actions: Array2<f64>,
        rewards: Vec<f64>,
        source_label: Option<String>,
    ) -> Result<Self, DataError> {
        let t = rewards.len();
        let fail = |message: String| DataError::Trajectory { id, message };
        if t == 0 {
            return Err(fail("trajectory has no transitions".into()));
        }
        if states.nrows() != t || actions.nrows() != t {
            return Err(fail(format!(
                "{} states and {} actions for {} rewards",
                states.nrows(),
                actions.nrows(),
                t
            )));
        }
        let finite = states
            .iter()
            .chain(actions.iter())
            .chain(rewards.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(fail("non-finite entry".into()));
        }
        let ret = rewards.iter().sum();
        Ok(Self {
            id,
            states,
            actions,
            rewards,
            ret,
            source_label,
        })
    }

    pub fn id(&self) -> TrajectoryId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn actions(&self) -> &Array2<f64> {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn total_return(&self) -> f64 {
        self.ret
    }

    pub fn source_label(&self) -> Option<&str> {
        self.source_label.as_deref()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> + '_ {
        self.states
            .rows()
            .into_iter()
            .zip(self.actions.rows())
            .zip(&self.rewards)
            .map(|((state, action), &reward)| Transition {
                state,
                action,
                reward,
            })
    }

    pub fn with_id(mut self, id: TrajectoryId) -> Self {
        self.id = id;
        self
    }

    fn clip_actions(&mut self, bounds: &Bounds) {
        for mut row in self.actions.rows_mut() {
            bounds.clip(row.as_slice_mut().expect("standard layout"));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    state_dim: usize,
    action_dim: usize,
    state_bounds: Bounds,
    action_bounds: Bounds,
}

impl Dataset {
    /// Builds a dataset whose bounds are computed from the data.
    pub fn from_trajectories(
        trajectories: Vec<Trajectory>,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self, DataError> {
        validate(&trajectories, state_dim, action_dim)?;
        let (state_bounds, action_bounds) = if trajectories.is_empty() {
            (
                Bounds::uniform(state_dim, 0.0, 0.0),
                Bounds::uniform(action_dim, 0.0, 0.0),
            )
        } else {
            bounds_of(&trajectories, state_dim, action_dim)
        };
        Ok(Self {
            trajectories,
            state_dim,
            action_dim,
            state_bounds,
            action_bounds,
        })
    }

    /// Builds a dataset with declared bounds; actions are clipped into `action_bounds`.
    pub fn with_bounds(
        mut trajectories: Vec<Trajectory>,
        state_bounds: Bounds,
        action_bounds: Bounds,
    ) -> Result<Self, DataError> {
        let (state_dim, action_dim) = (state_bounds.dim(), action_bounds.dim());
        if !state_bounds.is_valid() || !action_bounds.is_valid() {
            return Err(DataError::Precondition("bounds must satisfy min <= max".into()));
        }
        validate(&trajectories, state_dim, action_dim)?;
        for t in &mut trajectories {
            t.clip_actions(&action_bounds);
        }
        Ok(Self {
            trajectories,
            state_dim,
            action_dim,
            state_bounds,
            action_bounds,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_bounds(&self) -> &Bounds {
        &self.state_bounds
    }

    pub fn action_bounds(&self) -> &Bounds {
        &self.action_bounds
    }

    pub fn ids(&self) -> BTreeSet<TrajectoryId> {
        self.trajectories.iter().map(Trajectory::id).collect()
    }

    pub fn get(&self, id: TrajectoryId) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// The trajectories whose ids are in `ids`, in dataset order.
    pub fn subset(&self, ids: &BTreeSet<TrajectoryId>) -> Result<Dataset, DataError> {
        if let Some(missing) = ids.iter().find(|id| self.get(**id).is_none()) {
            return Err(DataError::UnknownId(*missing));
        }
        let trajectories = self
            .trajectories
            .iter()
            .filter(|t| ids.contains(&t.id))
            .cloned()
            .collect();
        Ok(Dataset {
            trajectories,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            state_bounds: self.state_bounds.clone(),
            action_bounds: self.action_bounds.clone(),
        })
    }

    /// Ground truth `id → is_expert`, or `None` when some trajectory is unlabeled.
    pub fn ground_truth(&self, expert_label: &str) -> Option<BTreeMap<TrajectoryId, bool>> {
        self.trajectories
            .iter()
            .map(|t| t.source_label().map(|l| (t.id, l == expert_label)))
            .collect()
    }

    /// Per-label trajectory counts and mean returns, ordered by label.
    pub fn label_summary(&self) -> Vec<(String, usize, f64)> {
        let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
        for t in &self.trajectories {
            let key = t.source_label().unwrap_or("<unlabeled>").to_string();
            let e = acc.entry(key).or_default();
            e.0 += 1;
            e.1 += t.total_return();
        }
        acc.into_iter()
            .map(|(k, (n, sum))| (k, n, sum / n as f64))
            .collect()
    }
}

fn validate(trajectories: &[Trajectory], state_dim: usize, action_dim: usize) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for t in trajectories {
        if !seen.insert(t.id) {
            return Err(DataError::DuplicateId(t.id));
        }
        if t.state_dim() != state_dim || t.action_dim() != action_dim {
            return Err(DataError::Trajectory {
                id: t.id,
                message: format!(
                    "dimensions ({}, {}) differ from dataset ({state_dim}, {action_dim})",
                    t.state_dim(),
                    t.action_dim()
                ),
            });
        }
    }
    Ok(())
}

fn bounds_of(trajectories: &[Trajectory], state_dim: usize, action_dim: usize) -> (Bounds, Bounds) {
    let mut s = vec![(f64::INFINITY, f64::NEG_INFINITY); state_dim];
    let mut a = vec![(f64::INFINITY, f64::NEG_INFINITY); action_dim];
    for t in trajectories {
        for row in t.states.rows() {
            for (b, &v) in s.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        for row in t.actions.rows() {
            for (b, &v) in a.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
    }
    (Bounds(s), Bounds(a))
}

/// Flat `(state, action)` rows gathered from one or more trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPairs {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
}

impl StateActionPairs {
    pub fn from_trajectories<'a, I>(trajectories: I, state_dim: usize, action_dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut n = 0;
        for t in trajectories {
            s.extend(t.states.iter());
            a.extend(t.actions.iter());
            n += t.len();
        }
        Self {
            states: Array2::from_shape_vec((n, state_dim), s).expect("consistent dims"),
            actions: Array2::from_shape_vec((n, action_dim), a).expect("consistent dims"),
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }
}

/// Per-dimension state and action bounds over every transition.
pub fn compute_bounds(dataset: &Dataset) -> Result<(Bounds, Bounds), DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(bounds_of(
        &dataset.trajectories,
        dataset.state_dim,
        dataset.action_dim,
    ))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    state_dim: usize,
    action_dim: usize,
    state_bounds: Bounds,
    action_bounds: Bounds,
    trajectories: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: TrajectoryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    steps: usize,
    #[serde(rename = "return")]
    ret: f64,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(dataset: &Dataset, w: &mut W) -> Result<(), DataError> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        state_dim: dataset.state_dim,
        action_dim: dataset.action_dim,
        state_bounds: dataset.state_bounds.clone(),
        action_bounds: dataset.action_bounds.clone(),
        trajectories: dataset.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for t in &dataset.trajectories {
        let record = Record {
            id: t.id,
            label: t.source_label.clone(),
            steps: t.len(),
            ret: t.ret,
            states: t.states.iter().copied().collect(),
            actions: t.actions.iter().copied().collect(),
            rewards: t.rewards.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut lines = reader.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(DataError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| DataError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(DataError::Parse {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    if header.state_bounds.dim() != header.state_dim || header.action_bounds.dim() != header.action_dim {
        return Err(DataError::Parse {
            line: 1,
            message: "bounds do not match declared dimensions".into(),
        });
    }
    let (s, a) = (header.state_dim, header.action_dim);
    let mut trajectories = Vec::with_capacity(header.trajectories);
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        let record_no = idx;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DataError::Schema {
            record: record_no,
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: format!("record {record_no}: {e}"),
        })?;
        let t = rec.steps;
        if rec.rewards.len() != t {
            return Err(schema(format!("{} rewards for {t} steps", rec.rewards.len())));
        }
        if rec.states.len() != t * s {
            return Err(schema(format!(
                "state array has {} values, expected {t} steps x {s}",
                rec.states.len()
            )));
        }
        if rec.actions.len() != t * a {
            return Err(schema(format!(
                "action array has {} values, expected {t} steps x {a}",
                rec.actions.len()
            )));
        }
        let states = Array2::from_shape_vec((t, s), rec.states).expect("length checked");
        let actions = Array2::from_shape_vec((t, a), rec.actions).expect("length checked");
        let traj = Trajectory::new(rec.id, states, actions, rec.rewards, rec.label)
            .map_err(|e| schema(e.to_string()))?;
        if (traj.ret - rec.ret).abs() > 1e-9 * (1.0 + rec.ret.abs()) {
            return Err(schema(format!(
                "stored return {} disagrees with reward sum {}",
                rec.ret, traj.ret
            )));
        }
        trajectories.push(traj);
    }
    if trajectories.len() != header.trajectories {
        return Err(DataError::Parse {
            line: trajectories.len() + 2,
            message: format!(
                "header announces {} trajectories, found {}",
                header.trajectories,
                trajectories.len()
            ),
        });
    }
    Dataset::with_bounds(trajectories, header.state_bounds, header.action_bounds)
}

/// Ids of the highest-return trajectories.
///
/// Selects `max(ceil(fraction · N), floor)` trajectories (never more than
/// `N`); ties in return go to the smaller id.
pub fn top_fraction_by_return(
    dataset: &Dataset,
    fraction: f64,
    floor: usize,
) -> Result<BTreeSet<TrajectoryId>, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Precondition(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = dataset.len();
    let wanted = ((fraction * n as f64 - 1e-9).ceil() as usize).max(floor).min(n);
    Ok(ranked_by_return(dataset).into_iter().take(wanted).collect())
}

/// Every id, best return first, ties by ascending id.
pub fn ranked_by_return(dataset: &Dataset) -> Vec<TrajectoryId> {
    let mut order: Vec<(f64, TrajectoryId)> = dataset
        .trajectories
        .iter()
        .map(|t| (t.total_return(), t.id))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, id)| id).collect()
}

/// Current positive / unlabeled split of the mixed dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipPartition {
    pub positive: BTreeSet<TrajectoryId>,
    pub unlabeled: BTreeSet<TrajectoryId>,
    pub iteration: usize,
}

impl MembershipPartition {
    /// Splits `all` into `positive` (intersected with `all`) and the rest.
    pub fn new(all: &BTreeSet<TrajectoryId>, positive: &BTreeSet<TrajectoryId>, iteration: usize) -> Self {
        let positive: BTreeSet<_> = positive.intersection(all).copied().collect();
        let unlabeled = all.difference(&positive).copied().collect();
        Self {
            positive,
            unlabeled,
            iteration,
        }
    }

    pub fn total(&self) -> usize {
        self.positive.len() + self.unlabeled.len()
    }

    /// Number of ids whose membership differs between the two partitions.
    pub fn changes_from(&self, previous: &MembershipPartition) -> usize {
        self.positive.symmetric_difference(&previous.positive).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Confusion counts of a partition against `id → is_expert` ground truth.
pub fn classification_accuracy(
    partition: &MembershipPartition,
    ground_truth: &BTreeMap<TrajectoryId, bool>,
) -> Result<Confusion, DataError> {
    let mut c = Confusion::default();
    for (ids, predicted) in [(&partition.positive, true), (&partition.unlabeled, false)] {
        for id in ids {
            let expert = *ground_truth.get(id).ok_or(DataError::UnknownId(*id))?;
            match (predicted, expert) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    if c.total() != ground_truth.len() {
        return Err(DataError::Precondition(format!(
            "partition covers {} trajectories, ground truth has {}",
            c.total(),
            ground_truth.len()
        )));
    }
    Ok(c)
}

pub const METRICS_HEADER: &str = "dataset,TP,FP,FN,TN,accuracy";

pub fn metrics_row(dataset: &str, c: &Confusion) -> String {
    format!(
        "{dataset},{},{},{},{},{:.6}",
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        c.accuracy()
    )
}

/// `(score − min) / (max − min)`, unclamped.
pub fn normalized_score(score: f64, score_min: f64, score_max: f64) -> Result<f64, DataError> {
    if !(score_max > score_min) {
        return Err(DataError::Precondition(format!(
            "score_max ({score_max}) must exceed score_min ({score_min})"
        )));
    }
    Ok((score - score_min) / (score_max - score_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn traj(id: u64, states: Array2<f64>, actions: Array2<f64>, rewards: Vec<f64>) -> Trajectory {
        Trajectory::new(TrajectoryId(id), states, actions, rewards, None).unwrap()
    }

    fn with_returns(returns: &[f64]) -> Dataset {
        let ts = returns
            .iter()
            .enumerate()
            .map(|(i, &r)| traj(i as u64, array![[0.0]], array![[0.0]], vec![r]))
            .collect();
        Dataset::from_trajectories(ts, 1, 1).unwrap()
    }

    #[test]
    fn return_is_cached_sum() {
        let t = traj(0, array![[0.0], [1.0]], array![[0.0], [0.0]], vec![0.25, -1.5]);
        assert_eq!(t.total_return(), -1.25);
        assert_eq!(t.transitions().count(), 2);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let r = Trajectory::new(TrajectoryId(0), Array2::zeros((0, 2)), Array2::zeros((0, 1)), vec![], None);
        assert!(matches!(r, Err(DataError::Trajectory { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let ts = vec![
            traj(3, array![[0.0]], array![[0.0]], vec![1.0]),
            traj(3, array![[1.0]], array![[0.0]], vec![1.0]),
        ];
        assert!(matches!(
            Dataset::from_trajectories(ts, 1, 1),
            Err(DataError::DuplicateId(TrajectoryId(3)))
        ));
    }

    #[test]
    fn bounds_direct_minmax() {
        let t = traj(0, array![[0.0, 1.0], [2.0, -1.0]], array![[0.5], [0.1]], vec![0.0, 0.0]);
        let d = Dataset::from_trajectories(vec![t], 2, 1).unwrap();
        let (s, a) = compute_bounds(&d).unwrap();
        assert_eq!(s, Bounds(vec![(0.0, 2.0), (-1.0, 1.0)]));
        assert_eq!(a, Bounds(vec![(0.1, 0.5)]));
    }

    #[test]
    fn bounds_degenerate_and_empty() {
        let t = traj(0, array![[3.0, 4.0], [3.0, 4.0]], array![[0.0], [0.0]], vec![0.0, 0.0]);
        let d = Dataset::from_trajectories(vec![t], 2, 1).unwrap();
        let (s, _) = compute_bounds(&d).unwrap();
        assert_eq!(s, Bounds(vec![(3.0, 3.0), (4.0, 4.0)]));
        let empty = Dataset::from_trajectories(vec![], 2, 1).unwrap();
        assert!(matches!(compute_bounds(&empty), Err(DataError::Empty)));
    }

    #[test]
    fn top_fraction_examples() {
        let d = with_returns(&[10.0, 5.0, 1.0]);
        let top = top_fraction_by_return(&d, 1.0 / 3.0, 1).unwrap();
        assert_eq!(top, BTreeSet::from([TrajectoryId(0)]));
        assert_eq!(top_fraction_by_return(&d, 1.0, 1).unwrap().len(), 3);
        assert!(top_fraction_by_return(&d, 0.0, 1).is_err());
        assert!(top_fraction_by_return(&d, 1.5, 1).is_err());
        let empty = Dataset::from_trajectories(vec![], 1, 1).unwrap();
        assert!(matches!(top_fraction_by_return(&empty, 0.5, 1), Err(DataError::Empty)));
    }

    #[test]
    fn top_fraction_floor_and_ties() {
        let d = with_returns(&[1.0, 2.0, 2.0, 0.0, 2.0, -1.0, 3.0]);
        // floor dominates ceil(0.1 * 7) = 1
        let top = top_fraction_by_return(&d, 0.1, 3).unwrap();
        // 3.0 (id 6), then the 2.0 tie resolved by id: 1, 2
        assert_eq!(top, BTreeSet::from([TrajectoryId(6), TrajectoryId(1), TrajectoryId(2)]));
        // floor never exceeds N
        assert_eq!(top_fraction_by_return(&d, 0.1, 50).unwrap().len(), 7);
    }

    #[test]
    fn accuracy_examples() {
        let c = Confusion {
            tp: 1194,
            fp: 9,
            fn_: 4,
            tn: 1188,
        };
        assert!((c.accuracy() - 2382.0 / 2395.0).abs() < 1e-15);
        assert!((c.accuracy() - 0.9946).abs() < 1e-4);
        let c = Confusion {
            tp: 1920,
            fp: 0,
            fn_: 0,
            tn: 1920,
        };
        assert_eq!(c.accuracy(), 1.0);
    }

    #[test]
    fn all_unlabeled_half_expert() {
        let all: BTreeSet<_> = (0..10).map(TrajectoryId).collect();
        let truth: BTreeMap<_, _> = all.iter().map(|&id| (id, id.0 < 5)).collect();
        let p = MembershipPartition::new(&all, &BTreeSet::new(), 0);
        let c = classification_accuracy(&p, &truth).unwrap();
        assert_eq!(c, Confusion { tp: 0, fp: 0, fn_: 5, tn: 5 });
        assert_eq!(c.accuracy(), 0.5);
    }

    #[test]
    fn accuracy_id_mismatch() {
        let all: BTreeSet<_> = (0..3).map(TrajectoryId).collect();
        let truth: BTreeMap<_, _> = (0..2).map(|i| (TrajectoryId(i), true)).collect();
        let p = MembershipPartition::new(&all, &BTreeSet::new(), 0);
        assert!(matches!(
            classification_accuracy(&p, &truth),
            Err(DataError::UnknownId(TrajectoryId(2)))
        ));
    }

    #[test]
    fn normalized_score_endpoints() {
        assert_eq!(normalized_score(-3.0, -3.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(5.0, -3.0, 5.0).unwrap(), 1.0);
        assert_eq!(normalized_score(1.0, -3.0, 5.0).unwrap(), 0.5);
        assert!(normalized_score(9.0, -3.0, 5.0).unwrap() > 1.0);
        assert!(normalized_score(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn metrics_row_format() {
        let c = Confusion { tp: 1, fp: 2, fn_: 3, tn: 4 };
        assert_eq!(metrics_row("mix", &c), "mix,1,2,3,4,0.500000");
    }

    #[test]
    fn partition_changes() {
        let all: BTreeSet<_> = (0..6).map(TrajectoryId).collect();
        let a = MembershipPartition::new(&all, &BTreeSet::from([TrajectoryId(0), TrajectoryId(1)]), 1);
        let b = MembershipPartition::new(&all, &BTreeSet::from([TrajectoryId(1), TrajectoryId(2), TrajectoryId(9)]), 2);
        assert_eq!(b.positive.len(), 2);
        assert_eq!(b.total(), 6);
        assert_eq!(b.changes_from(&a), 2);
    }

    #[test]
    fn file_roundtrip_small() {
        let t = Trajectory::new(
            TrajectoryId(42),
            array![[0.1 + 0.2, -1e-300]],
            array![[std::f64::consts::PI]],
            vec![-0.3333333333333333],
            Some("ExpertA".into()),
        )
        .unwrap();
        let d = Dataset::from_trajectories(vec![t], 2, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn file_roundtrip_empty() {
        let d = Dataset::from_trajectories(vec![], 6, 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn bad_state_length_names_record() {
        let ts = (0..9)
            .map(|i| traj(i, array![[0.0, 1.0]], array![[0.0]], vec![1.0]))
            .collect();
        let d = Dataset::from_trajectories(ts, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // record 7 lives on line 8, right after the header
        lines[7] = lines[7].replace("\"states\":[0.0,1.0]", "\"states\":[0.0,1.0,2.0]");
        let err = read_dataset(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            DataError::Schema { record, line, .. } => {
                assert_eq!((record, line), (7, 8));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_dataset(lines.join("\n").as_bytes())
            .unwrap_err()
            .to_string()
            .starts_with("record 7"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let d = with_returns(&[1.0, 2.0]);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{not json\n");
        match read_dataset(text.as_bytes()).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_bounds_clip_actions() {
        let t = traj(0, array![[0.0]], array![[2.5]], vec![0.0]);
        let d = Dataset::with_bounds(vec![t], Bounds(vec![(0.0, 0.0)]), Bounds(vec![(-1.0, 1.0)])).unwrap();
        assert_eq!(d.trajectories()[0].actions()[[0, 0]], 1.0);
    }
}
