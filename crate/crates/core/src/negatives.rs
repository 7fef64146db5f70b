//! Synthetic non-expert `(state, action)` pairs built by mismatching sources.
//!
//! Seven combinations are drawn: positive states with mixed or random
//! actions, mixed states with positive or random actions, and random states
//! with positive, mixed or random actions. Random coordinates are uniform in
//! per-dimension bounds. No generated pair may coincide with a raw pair.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Bounds, StateActionPairs};

/// Max-norm distance below which a synthetic pair counts as a copy of a raw pair.
pub const DISTINCT_TOL: f64 = 1e-9;

/// Resampling budget for a single pair.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum NegativeError {
    #[error("invalid bounds: every dimension needs min <= max")]
    InvalidBounds,
    #[error("combination {combo:?} draws from an empty pool")]
    EmptyPool { combo: Combo },
    #[error("negative set must contain at least one pair")]
    EmptySpec,
    #[error("could not produce a distinct pair for {combo:?} within {MAX_ATTEMPTS} attempts")]
    Exhausted { combo: Combo },
    #[error("dimension mismatch between pools and bounds")]
    Dimension,
}

/// Where a synthetic pair's state and action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Combo {
    PositiveStateMixedAction = 1,
    PositiveStateRandomAction = 2,
    MixedStatePositiveAction = 3,
    MixedStateRandomAction = 4,
    RandomStatePositiveAction = 5,
    RandomStateMixedAction = 6,
    RandomStateRandomAction = 7,
}

#[derive(Clone, Copy)]
enum Source {
    Positive,
    Mixed,
    Random,
}

impl Combo {
    pub const ALL: [Combo; 7] = [
        Combo::PositiveStateMixedAction,
        Combo::PositiveStateRandomAction,
        Combo::MixedStatePositiveAction,
        Combo::MixedStateRandomAction,
        Combo::RandomStatePositiveAction,
        Combo::RandomStateMixedAction,
        Combo::RandomStateRandomAction,
    ];

    /// 1-based tag.
    pub fn tag(self) -> u8 {
        self as u8
    }

    fn sources(self) -> (Source, Source) {
        use Source::*;
        match self {
            Combo::PositiveStateMixedAction => (Positive, Mixed),
            Combo::PositiveStateRandomAction => (Positive, Random),
            Combo::MixedStatePositiveAction => (Mixed, Positive),
            Combo::MixedStateRandomAction => (Mixed, Random),
            Combo::RandomStatePositiveAction => (Random, Positive),
            Combo::RandomStateMixedAction => (Random, Mixed),
            Combo::RandomStateRandomAction => (Random, Random),
        }
    }
}

/// Pair counts `n1..n7` per combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeMixSpec {
    pub counts: [usize; 7],
}

impl NegativeMixSpec {
    /// Splits `total` as evenly as possible; the first `total % 7` combos get one extra.
    pub fn equal_split(total: usize) -> Self {
        let (q, r) = (total / 7, total % 7);
        let mut counts = [q; 7];
        for c in counts.iter_mut().take(r) {
            *c += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, combo: Combo) -> usize {
        self.counts[combo.tag() as usize - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativePair {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub combo: Combo,
}

pub fn sample_uniform<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Result<Vec<f64>, NegativeError> {
    if !bounds.is_valid() {
        return Err(NegativeError::InvalidBounds);
    }
    Ok(bounds
        .0
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect())
}

pub fn sample_uniform_state<R: Rng + ?Sized>(state_bounds: &Bounds, rng: &mut R) -> Result<Vec<f64>, NegativeError> {
    sample_uniform(state_bounds, rng)
}

pub fn sample_uniform_action<R: Rng + ?Sized>(action_bounds: &Bounds, rng: &mut R) -> Result<Vec<f64>, NegativeError> {
    sample_uniform(action_bounds, rng)
}

/// Sorted index over raw concatenated `(s, a)` vectors for the distinctness test.
///
/// Rows are ordered by their first coordinate, so a lookup only scans the
/// rows whose first coordinate is within [`DISTINCT_TOL`] of the query.
#[derive(Debug, Clone)]
pub struct RawPairIndex {
    rows: Vec<Vec<f64>>,
}

impl RawPairIndex {
    pub fn new<'a, I>(pools: I) -> Self
    where
        I: IntoIterator<Item = &'a StateActionPairs>,
    {
        let mut rows = Vec::new();
        for pool in pools {
            for (s, a) in pool.states.rows().into_iter().zip(pool.actions.rows()) {
                let mut v: Vec<f64> = s.to_vec();
                v.extend(a.iter());
                rows.push(v);
            }
        }
        rows.sort_by(|a, b| cmp_first(a, b));
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when some raw pair lies within [`DISTINCT_TOL`] of `(state, action)` in max-norm.
    pub fn collides(&self, state: &[f64], action: &[f64]) -> bool {
        let key = state.first().or(action.first()).copied().unwrap_or(0.0);
        let start = self.rows.partition_point(|r| r[0] < key - DISTINCT_TOL);
        self.rows[start..]
            .iter()
            .take_while(|r| r[0] <= key + DISTINCT_TOL)
            .any(|r| {
                r.iter()
                    .zip(state.iter().chain(action))
                    .all(|(x, y)| (x - y).abs() < DISTINCT_TOL)
            })
    }
}

fn cmp_first(a: &[f64], b: &[f64]) -> Ordering {
    a[0].total_cmp(&b[0])
}

/// Generates `spec.total()` synthetic negatives, grouped by combination in tag order.
///
/// Raw states and actions are drawn uniformly over transitions with
/// replacement, independently for the state and the action.
pub fn generate_negatives<R: Rng + ?Sized>(
    positives: &StateActionPairs,
    mixed: &StateActionPairs,
    raw_index: &RawPairIndex,
    spec: &NegativeMixSpec,
    state_bounds: &Bounds,
    action_bounds: &Bounds,
    rng: &mut R,
) -> Result<Vec<NegativePair>, NegativeError> {
    if spec.total() == 0 {
        return Err(NegativeError::EmptySpec);
    }
    if !state_bounds.is_valid() || !action_bounds.is_valid() {
        return Err(NegativeError::InvalidBounds);
    }
    let (sd, ad) = (state_bounds.dim(), action_bounds.dim());
    for pool in [positives, mixed] {
        if !pool.is_empty() && (pool.state_dim() != sd || pool.action_dim() != ad) {
            return Err(NegativeError::Dimension);
        }
    }
    let mut out = Vec::with_capacity(spec.total());
    for combo in Combo::ALL {
        let n = spec.count(combo);
        if n == 0 {
            continue;
        }
        let (state_src, action_src) = combo.sources();
        let pool_of = |src: Source| match src {
            Source::Positive => Some(positives),
            Source::Mixed => Some(mixed),
            Source::Random => None,
        };
        for src in [state_src, action_src] {
            if pool_of(src).is_some_and(StateActionPairs::is_empty) {
                return Err(NegativeError::EmptyPool { combo });
            }
        }
        for _ in 0..n {
            let mut attempt = 0;
            loop {
                if attempt == MAX_ATTEMPTS {
                    return Err(NegativeError::Exhausted { combo });
                }
                attempt += 1;
                let state = match pool_of(state_src) {
                    Some(pool) => draw_row(&pool.states, rng),
                    None => sample_uniform(state_bounds, rng)?,
                };
                let action = match pool_of(action_src) {
                    Some(pool) => draw_row(&pool.actions, rng),
                    None => sample_uniform(action_bounds, rng)?,
                };
                if !raw_index.collides(&state, &action) {
                    out.push(NegativePair { state, action, combo });
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn draw_row<R: Rng + ?Sized>(m: &Array2<f64>, rng: &mut R) -> Vec<f64> {
    m.row(rng.gen_range(0..m.nrows())).to_vec()
}

/// Stacks negatives into `(states, actions)` matrices.
pub fn to_pairs(negatives: &[NegativePair], state_dim: usize, action_dim: usize) -> StateActionPairs {
    let n = negatives.len();
    let mut s = Vec::with_capacity(n * state_dim);
    let mut a = Vec::with_capacity(n * action_dim);
    for p in negatives {
        s.extend(&p.state);
        a.extend(&p.action);
    }
    StateActionPairs {
        states: Array2::from_shape_vec((n, state_dim), s).expect("consistent dims"),
        actions: Array2::from_shape_vec((n, action_dim), a).expect("consistent dims"),
    }
}
