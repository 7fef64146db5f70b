//! Behavioral cloning on a selected subset and closed-loop evaluation.
//!
//! The policy is a fixed-σ Gaussian around a deterministic mean, so the
//! negative log-likelihood is an affine function of the squared action error.
//! Evaluation always uses the mean action.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{normalized_score, Bounds, Dataset, StateActionPairs};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, GradBundle, NnError, Parameters};
use crate::synth::{episode_return, Controller, PointMassEnv};

#[derive(Debug, Error)]
pub enum BcError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training subset is empty")]
    EmptySubset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed policy file: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcObjective {
    /// Gaussian negative log-likelihood with fixed σ.
    Nll,
    /// Mean squared action error.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub sigma: f64,
    pub objective: BcObjective,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 100,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            sigma: 0.1,
            objective: BcObjective::Nll,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<(), BcError> {
        if self.epochs == 0 {
            return Err(BcError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(BcError::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(BcError::Config("learning rate must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(BcError::Config("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic-mean policy.
///
/// The network sees states rescaled to `[-1, 1]` by `state_bounds` and its tanh
/// output is mapped affinely onto `action_bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    net: DenseNet,
    state_bounds: Bounds,
    action_bounds: Bounds,
    sigma: f64,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        state_bounds: Bounds,
        action_bounds: Bounds,
        hidden: &[usize],
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, BcError> {
        let mut dims = vec![state_bounds.dim()];
        dims.extend(hidden);
        dims.push(action_bounds.dim());
        let net = DenseNet::glorot(&dims, Activation::Tanh, Activation::Tanh, rng);
        Self::from_parts(net, state_bounds, action_bounds, sigma)
    }

    pub fn from_parts(net: DenseNet, state_bounds: Bounds, action_bounds: Bounds, sigma: f64) -> Result<Self, BcError> {
        if net.input_dim() != state_bounds.dim() || net.output_dim() != action_bounds.dim() {
            return Err(BcError::Config("network dimensions do not match the bounds".into()));
        }
        if net.layers().last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(BcError::Config("policy network must end in tanh".into()));
        }
        if !state_bounds.is_valid() || !action_bounds.is_valid() {
            return Err(BcError::Config("invalid bounds".into()));
        }
        Ok(Self {
            net,
            state_bounds,
            action_bounds,
            sigma,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn action_bounds(&self) -> &Bounds {
        &self.action_bounds
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn scale_states(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let mut x = states.to_owned();
        for (mut col, &(lo, hi)) in x.axis_iter_mut(Axis(1)).zip(&self.state_bounds.0) {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            if half > 0.0 {
                col.mapv_inplace(|v| (v - mid) / half);
            } else {
                col.fill(0.0);
            }
        }
        x
    }

    fn action_affine(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.action_bounds.0.iter().map(|&(lo, hi)| (0.5 * (hi + lo), 0.5 * (hi - lo)))
    }

    /// Mean actions for a batch of states (not clipped).
    pub fn mean_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>, BcError> {
        let mut y = self.net.forward_batch(self.scale_states(states).view())?;
        for (mut col, (mid, half)) in y.axis_iter_mut(Axis(1)).zip(self.action_affine()) {
            col.mapv_inplace(|v| mid + half * v);
        }
        Ok(y)
    }

    /// Deterministic mean action, clipped to the action bounds.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, BcError> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|_| NnError::Shape)?;
        if state.len() != self.state_dim() {
            return Err(BcError::Nn(NnError::Dimension {
                context: "policy input",
                expected: self.state_dim(),
                got: state.len(),
            }));
        }
        let mut a = self.mean_batch(s)?.row(0).to_vec();
        self.action_bounds.clip(&mut a);
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<(), BcError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BcError> {
        let p: Policy = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_parts(p.net, p.state_bounds, p.action_bounds, p.sigma)
    }
}

impl Controller for Policy {
    fn act(&self, state: &[f64], _rng: &mut ChaCha8Rng) -> Vec<f64> {
        Policy::act(self, state).expect("policy dimensions match the environment")
    }
}

impl Parameters for Policy {
    fn flatten(&self) -> Vec<f64> {
        self.net.flatten()
    }

    fn load_flat(&mut self, flat: &[f64]) {
        self.net.load_flat(flat);
    }
}

/// Batch loss and parameter gradients of the cloning objective.
///
/// Mse is `mean over rows and dims of (a − μ)²`; Nll is
/// `mean over rows of Σ_j (a_j − μ_j)² / 2σ² + ln(σ√(2π))`.
pub fn bc_loss_and_grad(
    policy: &Policy,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    objective: BcObjective,
) -> Result<(f64, GradBundle), BcError> {
    let n = states.nrows();
    let a_dim = policy.action_dim();
    if actions.dim() != (n, a_dim) {
        return Err(BcError::Nn(NnError::Dimension {
            context: "action batch",
            expected: a_dim,
            got: actions.ncols(),
        }));
    }
    if n == 0 {
        return Err(BcError::EmptySubset);
    }
    let trace = policy.net.forward_trace(policy.scale_states(states).view())?;
    let y = trace.output();
    let sigma = policy.sigma;
    let (weight, offset) = match objective {
        BcObjective::Mse => (1.0 / (n * a_dim) as f64, 0.0),
        BcObjective::Nll => (
            1.0 / (2.0 * sigma * sigma * n as f64),
            a_dim as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln(),
        ),
    };
    let mut loss = 0.0;
    let mut upstream = Array2::zeros(y.dim());
    for (j, (mid, half)) in policy.action_affine().enumerate() {
        for i in 0..n {
            let err = mid + half * y[[i, j]] - actions[[i, j]];
            loss += weight * err * err;
            upstream[[i, j]] = 2.0 * weight * err * half;
        }
    }
    let (grads, _) = policy.net.backward_batch(&trace, upstream.view())?;
    Ok((loss + offset, grads))
}

/// Trains a fresh policy on every transition of `subset`. Returns the policy
/// and the mean batch loss per epoch.
pub fn train_bc<R: Rng + ?Sized>(subset: &Dataset, config: &BcConfig, rng: &mut R) -> Result<(Policy, Vec<f64>), BcError> {
    config.validate()?;
    if subset.is_empty() || subset.transition_count() == 0 {
        return Err(BcError::EmptySubset);
    }
    let pairs = StateActionPairs::from_trajectories(subset.trajectories(), subset.state_dim(), subset.action_dim());
    let mut policy = Policy::new(
        subset.state_bounds().clone(),
        subset.action_bounds().clone(),
        &config.hidden,
        config.sigma,
        rng,
    )?;
    let mut adam = AdamState::new(&policy.net, AdamConfig::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let s = pairs.states.select(Axis(0), chunk);
            let a = pairs.actions.select(Axis(0), chunk);
            let (loss, grads) = bc_loss_and_grad(&policy, s.view(), a.view(), config.objective)?;
            adam.step(&mut policy.net, &grads)?;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((policy, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub normalized: f64,
    pub episodes: usize,
}

pub const EVAL_HEADER: &str = "episode,return";

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>, score_bounds: (f64, f64)) -> Result<Self, BcError> {
        if returns.is_empty() {
            return Err(BcError::Config("at least one episode is required".into()));
        }
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let normalized =
            normalized_score(mean, score_bounds.0, score_bounds.1).map_err(|e| BcError::Config(e.to_string()))?;
        Ok(Self {
            episodes: returns.len(),
            returns,
            mean,
            normalized,
        })
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(EVAL_HEADER);
        out.push('\n');
        for (i, r) in self.returns.iter().enumerate() {
            writeln!(out, "{i},{r}").unwrap();
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "episodes={} mean_return={} normalized_score={}",
            self.episodes, self.mean, self.normalized
        )
    }
}

/// Runs `episodes` closed-loop episodes in parallel. Episode `i` uses the
/// `i`-th seed drawn from a generator seeded with `seed`.
pub fn evaluate<C: Controller + ?Sized>(
    controller: &C,
    env: &PointMassEnv,
    episodes: usize,
    seed: u64,
    score_bounds: (f64, f64),
) -> Result<EvalReport, BcError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..episodes).map(|_| master.gen()).collect();
    let returns: Vec<f64> = seeds
        .par_iter()
        .map(|&s| episode_return(controller, env, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    EvalReport::from_returns(returns, score_bounds)
}
