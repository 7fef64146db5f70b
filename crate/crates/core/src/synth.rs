//! A 2-D point-mass reaching task with scripted policies of graded skill.
//!
//! State is `[px, py, vx, vy, gx, gy]`, the action is an acceleration in
//! `[-1, 1]²`. Each step applies `v ← (v + a·dt)·(1 − drag)`, `p ← p + v·dt`
//! and pays `−‖p − goal‖`. The goal is uniform in `[-goal_range, goal_range]²`
//! (the origin by default) and the start lies `start_distance` away from it in
//! a uniform direction, at rest.
//!
//! A per-episode goal is a constant fingerprint in every state of a trajectory,
//! which lets a classifier memorize individual trajectories instead of a
//! behavior; the default keeps it fixed.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Trajectory, TrajectoryId};

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

/// Magnitude of ExpertB's sideways push, perpendicular to the goal direction.
/// It never fades, so ExpertB ends on a small orbit around the goal instead of
/// coming to rest.
pub const EXPERT_B_ORBIT: f64 = 0.25;

/// Label of the target expert in synthetic datasets.
pub const TARGET_LABEL: &str = "ExpertA";

/// Seed used to estimate reference returns for score normalization.
pub const CALIBRATION_SEED: u64 = 20_240_601;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("unknown dataset kind {0:?} (expected E, E+E, E+W, E+N or E+E+W+N)")]
    UnknownKind(String),
    #[error("unknown policy {0:?} (expected ExpertA, ExpertB, Weak or Noise)")]
    UnknownPolicy(String),
    #[error("per-source count must be >= 1")]
    EmptyCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassEnv {
    pub dt: f64,
    pub drag: f64,
    pub horizon: usize,
    pub goal_range: f64,
    pub start_distance: f64,
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self {
            dt: 0.05,
            drag: 0.005,
            horizon: 100,
            goal_range: 0.0,
            start_distance: 1.4,
        }
    }
}

impl PointMassEnv {
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; STATE_DIM] {
        let gx = rng.gen_range(-self.goal_range..=self.goal_range);
        let gy = rng.gen_range(-self.goal_range..=self.goal_range);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let (sin, cos) = theta.sin_cos();
        [gx + self.start_distance * cos, gy + self.start_distance * sin, 0.0, 0.0, gx, gy]
    }

    /// Advances `state` in place and returns the reward of the resulting position.
    pub fn step(&self, state: &mut [f64; STATE_DIM], action: &[f64]) -> f64 {
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            state[2 + i] = (state[2 + i] + a * self.dt) * (1.0 - self.drag);
            state[i] += state[2 + i] * self.dt;
        }
        -((state[0] - state[4]).powi(2) + (state[1] - state[5]).powi(2)).sqrt()
    }
}

/// Anything that maps a state to an action inside `[-1, 1]²`.
pub trait Controller: Sync {
    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    ExpertA,
    ExpertB,
    Weak,
    Noise,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::ExpertA,
        PolicyKind::ExpertB,
        PolicyKind::Weak,
        PolicyKind::Noise,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::ExpertA => "ExpertA",
            PolicyKind::ExpertB => "ExpertB",
            PolicyKind::Weak => "Weak",
            PolicyKind::Noise => "Noise",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| SynthError::UnknownPolicy(s.to_string()))
    }
}

/// PD controller toward the goal with an optional sideways push and
/// Gaussian action noise, or uniform random actions for [`PolicyKind::Noise`].
/// Actions are finally clipped per component to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub kind: PolicyKind,
    pub kp: f64,
    pub kd: f64,
    /// Push of this magnitude along the goal direction rotated by +90°.
    pub orbit: f64,
    pub noise_sigma: f64,
}

impl ScriptedPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        let (kp, kd, orbit, noise_sigma) = match kind {
            PolicyKind::ExpertA => (4.0, 2.0, 0.0, 0.0),
            PolicyKind::ExpertB => (4.0, 2.0, EXPERT_B_ORBIT, 0.0),
            PolicyKind::Weak => (1.0, 0.2, 0.0, 0.3),
            PolicyKind::Noise => (0.0, 0.0, 0.0, 0.0),
        };
        Self {
            kind,
            kp,
            kd,
            orbit,
            noise_sigma,
        }
    }
}

impl Controller for ScriptedPolicy {
    fn act(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.kind == PolicyKind::Noise {
            return (0..ACTION_DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        }
        let e = [s[4] - s[0], s[5] - s[1]];
        let dist = e[0].hypot(e[1]);
        let push = if dist > 0.0 { self.orbit / dist } else { 0.0 };
        let mut a = vec![
            self.kp * e[0] - self.kd * s[2] - push * e[1],
            self.kp * e[1] - self.kd * s[3] + push * e[0],
        ];
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("positive sigma");
            for v in &mut a {
                *v += n.sample(rng);
            }
        }
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        a
    }
}

/// Runs one episode and records it as a trajectory.
pub fn rollout<C: Controller + ?Sized>(
    controller: &C,
    env: &PointMassEnv,
    rng: &mut ChaCha8Rng,
    id: TrajectoryId,
    label: Option<&str>,
) -> Trajectory {
    let t = env.horizon;
    let mut states = Array2::zeros((t, STATE_DIM));
    let mut actions = Array2::zeros((t, ACTION_DIM));
    let mut rewards = Vec::with_capacity(t);
    let mut s = env.reset(rng);
    for step in 0..t {
        let mut a = controller.act(&s, rng);
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        states.row_mut(step).assign(&ndarray::ArrayView1::from(&s[..]));
        actions.row_mut(step).assign(&ndarray::ArrayView1::from(&a[..]));
        rewards.push(env.step(&mut s, &a));
    }
    Trajectory::new(id, states, actions, rewards, label.map(str::to_string)).expect("finite rollout")
}

/// Episode return only, without recording the trajectory.
pub fn episode_return<C: Controller + ?Sized>(controller: &C, env: &PointMassEnv, rng: &mut ChaCha8Rng) -> f64 {
    let mut s = env.reset(rng);
    let mut total = 0.0;
    for _ in 0..env.horizon {
        let a = controller.act(&s, rng);
        total += env.step(&mut s, &a);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixKind {
    E,
    EE,
    EW,
    EN,
    EEWN,
}

impl MixKind {
    pub const ALL: [MixKind; 5] = [MixKind::E, MixKind::EE, MixKind::EW, MixKind::EN, MixKind::EEWN];

    pub fn name(self) -> &'static str {
        match self {
            MixKind::E => "E",
            MixKind::EE => "E+E",
            MixKind::EW => "E+W",
            MixKind::EN => "E+N",
            MixKind::EEWN => "E+E+W+N",
        }
    }

    pub fn sources(self) -> &'static [PolicyKind] {
        use PolicyKind::*;
        match self {
            MixKind::E => &[ExpertA],
            MixKind::EE => &[ExpertA, ExpertB],
            MixKind::EW => &[ExpertA, Weak],
            MixKind::EN => &[ExpertA, Noise],
            MixKind::EEWN => &[ExpertA, ExpertB, Weak, Noise],
        }
    }
}

impl fmt::Display for MixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MixKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownKind(s.to_string()))
    }
}

/// Equal-count labeled mixture of the kind's sources, shuffled, ids `0..N`.
pub fn compose_dataset(kind: MixKind, per_source_count: usize, seed: u64) -> Result<Dataset, SynthError> {
    compose_dataset_with(kind, per_source_count, seed, &PointMassEnv::default())
}

pub fn compose_dataset_with(
    kind: MixKind,
    per_source_count: usize,
    seed: u64,
    env: &PointMassEnv,
) -> Result<Dataset, SynthError> {
    if per_source_count == 0 {
        return Err(SynthError::EmptyCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(per_source_count * kind.sources().len());
    for &source in kind.sources() {
        let policy = ScriptedPolicy::new(source);
        for _ in 0..per_source_count {
            let mut episode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            trajectories.push(rollout(&policy, env, &mut episode_rng, TrajectoryId(0), Some(source.label())));
        }
    }
    trajectories.shuffle(&mut rng);
    let trajectories = trajectories
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.with_id(TrajectoryId(i as u64)))
        .collect();
    Ok(Dataset::from_trajectories(trajectories, STATE_DIM, ACTION_DIM).expect("consistent synthetic data"))
}

/// Mean return of a scripted policy over `episodes` seeded episodes.
pub fn mean_return(kind: PolicyKind, env: &PointMassEnv, episodes: usize, seed: u64) -> f64 {
    let policy = ScriptedPolicy::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..episodes)
        .map(|_| {
            let mut episode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            episode_return(&policy, env, &mut episode_rng)
        })
        .sum();
    total / episodes as f64
}

/// `(score_min, score_max)` for normalization: the Noise and ExpertA mean returns
/// over 100 episodes at [`CALIBRATION_SEED`].
pub fn reference_score_bounds(env: &PointMassEnv) -> (f64, f64) {
    (
        mean_return(PolicyKind::Noise, env, 100, CALIBRATION_SEED),
        mean_return(PolicyKind::ExpertA, env, 100, CALIBRATION_SEED),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_at_setpoint_is_still() {
        let p = ScriptedPolicy::new(PolicyKind::ExpertA);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.3, -0.2, 0.0, 0.0, 0.3, -0.2];
        let a = p.act(&s, &mut rng);
        assert!(a.iter().all(|v| v.abs() < 1e-12));
        let b = ScriptedPolicy::new(PolicyKind::ExpertB).act(&s, &mut rng);
        assert!(b.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn step_dynamics() {
        let env = PointMassEnv {
            drag: 0.02,
            ..PointMassEnv::default()
        };
        let mut s = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let r = env.step(&mut s, &[1.0, 5.0]);
        // action clipped to 1 on both axes
        let vx = (1.0 + 0.05) * 0.98;
        let vy = 0.05 * 0.98;
        assert!((s[2] - vx).abs() < 1e-15 && (s[3] - vy).abs() < 1e-15);
        assert!((s[0] - vx * 0.05).abs() < 1e-15);
        let d = ((s[0] - 1.0).powi(2) + s[1].powi(2)).sqrt();
        assert!((r + d).abs() < 1e-15);
    }

    #[test]
    fn noise_rollout_in_bounds() {
        let env = PointMassEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rollout(&ScriptedPolicy::new(PolicyKind::Noise), &env, &mut rng, TrajectoryId(0), Some("Noise"));
        assert_eq!(t.len(), 100);
        assert!(t.actions().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(t.rewards().iter().all(|&r| r <= 0.0));
        assert_eq!(t.source_label(), Some("Noise"));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("E+E+W+N".parse::<MixKind>().unwrap(), MixKind::EEWN);
        assert_eq!("e+w".parse::<MixKind>().unwrap(), MixKind::EW);
        assert!(matches!("X+Y".parse::<MixKind>(), Err(SynthError::UnknownKind(_))));
        assert_eq!("Weak".parse::<PolicyKind>().unwrap(), PolicyKind::Weak);
    }

    #[test]
    fn compose_counts_and_labels() {
        let d = compose_dataset(MixKind::E, 5, 3).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.trajectories().iter().all(|t| t.source_label() == Some("ExpertA")));
        let d = compose_dataset(MixKind::EEWN, 4, 3).unwrap();
        assert_eq!(d.len(), 16);
        for kind in PolicyKind::ALL {
            let n = d
                .trajectories()
                .iter()
                .filter(|t| t.source_label() == Some(kind.label()))
                .count();
            assert_eq!(n, 4);
        }
        let ids: Vec<u64> = d.trajectories().iter().map(|t| t.id().0).collect();
        assert_eq!(ids, (0..16).collect::<Vec<_>>());
        assert_eq!(compose_dataset(MixKind::EW, 0, 1), Err(SynthError::EmptyCount));
    }

    #[test]
    fn compose_is_reproducible() {
        assert_eq!(
            compose_dataset(MixKind::EN, 3, 9).unwrap(),
            compose_dataset(MixKind::EN, 3, 9).unwrap()
        );
        assert_ne!(
            compose_dataset(MixKind::EN, 3, 9).unwrap(),
            compose_dataset(MixKind::EN, 3, 10).unwrap()
        );
    }

    #[test]
    fn reset_places_start_at_distance() {
        let env = PointMassEnv {
            goal_range: 0.5,
            ..PointMassEnv::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = env.reset(&mut rng);
            assert!(s[4].abs() <= 0.5 && s[5].abs() <= 0.5);
            let d = (s[0] - s[4]).hypot(s[1] - s[5]);
            assert!((d - env.start_distance).abs() < 1e-12);
            assert_eq!((s[2], s[3]), (0.0, 0.0));
        }
        let s = PointMassEnv::default().reset(&mut rng);
        assert_eq!((s[4], s[5]), (0.0, 0.0));
    }

    #[test]
    fn expert_b_keeps_moving_near_the_goal() {
        let env = PointMassEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rollout(&ScriptedPolicy::new(PolicyKind::ExpertA), &env, &mut rng.clone(), TrajectoryId(0), None);
        let b = rollout(&ScriptedPolicy::new(PolicyKind::ExpertB), &env, &mut rng, TrajectoryId(1), None);
        let speed = |t: &Trajectory| {
            let s = t.states().row(t.len() - 1);
            s[2].hypot(s[3])
        };
        assert!(speed(&a) < 0.05, "{}", speed(&a));
        assert!(speed(&b) > 0.1, "{}", speed(&b));
        assert!(speed(&b) > 4.0 * speed(&a));
    }

    #[test]
    fn calibration_ordering() {
        let env = PointMassEnv::default();
        let m = |k| mean_return(k, &env, 100, CALIBRATION_SEED);
        let (a, b, w, n) = (
            m(PolicyKind::ExpertA),
            m(PolicyKind::ExpertB),
            m(PolicyKind::Weak),
            m(PolicyKind::Noise),
        );
        assert!((a - b).abs() <= 0.1 * a.abs().max(b.abs()), "A {a} B {b}");
        for e in [a, b] {
            assert!(e - w >= 0.5 * e.abs(), "expert {e} weak {w}");
        }
        assert!(w > n);
        assert_eq!(reference_score_bounds(&env), (n, a));
    }

    #[test]
    fn expert_return_gap_over_weak() {
        let env = PointMassEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut mean = |k| {
            let p = ScriptedPolicy::new(k);
            (0..100).map(|_| episode_return(&p, &env, &mut rng)).sum::<f64>() / 100.0
        };
        let a = mean(PolicyKind::ExpertA);
        let w = mean(PolicyKind::Weak);
        assert!(a - w >= 0.5 * a.abs());
    }

    #[test]
    fn expert_outscores_noise_in_e_plus_n() {
        let d = compose_dataset(MixKind::EN, 30, 5).unwrap();
        let mean = |label: &str| {
            let r: Vec<f64> = d
                .trajectories()
                .iter()
                .filter(|t| t.source_label() == Some(label))
                .map(|t| t.total_return())
                .collect();
            r.iter().sum::<f64>() / r.len() as f64
        };
        assert!(mean("ExpertA") > mean("Noise"));
    }
}
