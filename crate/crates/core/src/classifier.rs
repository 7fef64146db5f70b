//! The expert-membership classifier and its training objectives.
//!
//! `F(s, a) = head(encoder(s) ⊕ a)`: the encoder compresses the state before
//! it meets the action so a wide state cannot drown out a narrow action. The
//! head ends in a sigmoid and is read as the probability that the pair came
//! from the target expert.
//!
//! Three objectives train it:
//! - [`LossKind::Bce`]: cross-entropy with positives against synthetic negatives,
//! - [`LossKind::Unbiased`]: the class-prior reweighted PU risk over an unlabeled pool,
//! - [`LossKind::NonNegative`]: the same risk with its negative-class part clipped at zero.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::StateActionPairs;
use crate::nn::{bce_loss_and_grad, Activation, AdamConfig, AdamState, DenseNet, GradBundle, NnError, Parameters};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed classifier file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Hidden widths of the encoder and head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub encoder_hidden: Vec<usize>,
    /// Requested latent width; see [`ClassifierArch::latent_dim`].
    pub latent: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64],
            latent: 16,
            head_hidden: vec![64, 64],
        }
    }
}

impl ClassifierArch {
    /// Effective latent width: the requested width, kept below `state_dim`
    /// whenever the state is wider than the action.
    pub fn latent_dim(&self, state_dim: usize, action_dim: usize) -> usize {
        if state_dim > action_dim {
            self.latent.min(state_dim - 1).max(1)
        } else {
            self.latent.max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertClassifier {
    encoder: DenseNet,
    head: DenseNet,
}

/// Gradients for both halves of an [`ExpertClassifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub encoder: GradBundle,
    pub head: GradBundle,
}

impl ClassifierGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.head.flatten());
        v
    }
}

impl ExpertClassifier {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, arch: &ClassifierArch, rng: &mut R) -> Self {
        let latent = arch.latent_dim(state_dim, action_dim);
        let mut enc_dims = vec![state_dim];
        enc_dims.extend(&arch.encoder_hidden);
        enc_dims.push(latent);
        let mut head_dims = vec![latent + action_dim];
        head_dims.extend(&arch.head_hidden);
        head_dims.push(1);
        Self {
            encoder: DenseNet::glorot(&enc_dims, Activation::Tanh, Activation::Tanh, rng),
            head: DenseNet::glorot(&head_dims, Activation::Relu, Activation::Sigmoid, rng),
        }
    }

    /// Builds a classifier from explicit networks.
    pub fn from_parts(encoder: DenseNet, head: DenseNet) -> Result<Self, ClassifierError> {
        let latent = encoder.output_dim();
        if head.input_dim() <= latent {
            return Err(ClassifierError::Nn(NnError::Dimension {
                context: "head input (latent + action)",
                expected: latent + 1,
                got: head.input_dim(),
            }));
        }
        if head.output_dim() != 1 || head.layers().last().map(|l| l.activation) != Some(Activation::Sigmoid) {
            return Err(ClassifierError::Config("head must end in a single sigmoid unit".into()));
        }
        Ok(Self { encoder, head })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.head.input_dim() - self.encoder.output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<f64, ClassifierError> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("contiguous slice");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("contiguous slice");
        Ok(self.predict_batch(s, a)?[0])
    }

    /// Probabilities for paired rows of `states` and `actions`.
    pub fn predict_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>, ClassifierError> {
        self.check_dims(states, actions)?;
        let latent = self.encoder.forward_batch(states)?;
        let input = concatenate![Axis(1), latent, actions];
        Ok(self.head.forward_batch(input.view())?.column(0).to_owned())
    }

    /// Forward pass plus the backward pass of `Σ_i dloss_i · F_i`.
    fn forward_backward<G>(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        loss_grad: G,
    ) -> Result<(f64, ClassifierGrads), ClassifierError>
    where
        G: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        self.check_dims(states, actions)?;
        let enc = self.encoder.forward_trace(states)?;
        let input = concatenate![Axis(1), *enc.output(), actions];
        let head = self.head.forward_trace(input.view())?;
        let probs: Vec<f64> = head.output().column(0).to_vec();
        let (loss, dprob) = loss_grad(&probs);
        let upstream = Array2::from_shape_vec((dprob.len(), 1), dprob).expect("one gradient per sample");
        let (head_grads, input_grad) = self.head.backward_batch(&head, upstream.view())?;
        let latent_grad = input_grad.slice(s![.., ..self.latent_dim()]).to_owned();
        let (enc_grads, _) = self.encoder.backward_batch(&enc, latent_grad.view())?;
        Ok((
            loss,
            ClassifierGrads {
                encoder: enc_grads,
                head: head_grads,
            },
        ))
    }

    fn check_dims(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(), ClassifierError> {
        let mismatch = |context, expected, got| Err(NnError::Dimension { context, expected, got }.into());
        if states.ncols() != self.state_dim() {
            return mismatch("classifier state", self.state_dim(), states.ncols());
        }
        if actions.ncols() != self.action_dim() {
            return mismatch("classifier action", self.action_dim(), actions.ncols());
        }
        if states.nrows() != actions.nrows() {
            return mismatch("state/action rows", states.nrows(), actions.nrows());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let c: ExpertClassifier = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_parts(c.encoder, c.head)
    }
}

impl Parameters for ExpertClassifier {
    fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.head.flatten());
        v
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let n = self.encoder.param_count();
        self.encoder.load_flat(&flat[..n]);
        self.head.load_flat(&flat[n..]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Unbiased,
    #[serde(rename = "nonneg")]
    NonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    /// Class prior δ for the PU objectives.
    pub class_prior: f64,
    /// Lower bound on minibatches per epoch; small pools get smaller batches.
    pub min_batches_per_epoch: usize,
}

impl Default for PuTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 20,
            loss: LossKind::Bce,
            class_prior: 0.004,
            min_batches_per_epoch: 64,
        }
    }
}

impl PuTrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs == 0 {
            return Err(ClassifierError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::Config("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.class_prior) {
            return Err(ClassifierError::Config(format!(
                "class prior must lie in [0, 1], got {}",
                self.class_prior
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ClassifierError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value and `dL/dF_i` for a batch of probabilities.
///
/// `labels[i]` marks the positive pool; the other pool is the synthetic
/// negatives (`Bce`) or the unlabeled data (PU objectives). Pool means are
/// taken separately, so an absent pool contributes nothing.
pub fn objective(kind: LossKind, prior: f64, probs: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_other = labels.len() - n_pos;
    let inv_pos = if n_pos > 0 { 1.0 / n_pos as f64 } else { 0.0 };
    let inv_other = if n_other > 0 { 1.0 / n_other as f64 } else { 0.0 };

    // pool means of -log F (positives), -log(1-F) (positives), -log(1-F) (other)
    let mut pos_as_pos = 0.0;
    let mut pos_as_neg = 0.0;
    let mut other_as_neg = 0.0;
    for (&p, &l) in probs.iter().zip(labels) {
        if l {
            pos_as_pos += bce_loss_and_grad(p, true).0 * inv_pos;
            pos_as_neg += bce_loss_and_grad(p, false).0 * inv_pos;
        } else {
            other_as_neg += bce_loss_and_grad(p, false).0 * inv_other;
        }
    }

    let (pos_weight, pos_neg_weight, other_weight, loss) = match kind {
        LossKind::Bce => (1.0, 0.0, 1.0, pos_as_pos + other_as_neg),
        LossKind::Unbiased => (
            prior,
            -prior,
            1.0,
            prior * pos_as_pos + other_as_neg - prior * pos_as_neg,
        ),
        LossKind::NonNegative => {
            let inner = other_as_neg - prior * pos_as_neg;
            if inner >= 0.0 {
                (prior, -prior, 1.0, prior * pos_as_pos + inner)
            } else {
                (prior, 0.0, 0.0, prior * pos_as_pos)
            }
        }
    };

    let grads = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            if l {
                inv_pos * (pos_weight * bce_loss_and_grad(p, true).1 + pos_neg_weight * bce_loss_and_grad(p, false).1)
            } else {
                inv_other * other_weight * bce_loss_and_grad(p, false).1
            }
        })
        .collect();
    (loss, grads)
}

/// Stacked training rows with their pool labels.
struct LabeledPool {
    states: Array2<f64>,
    actions: Array2<f64>,
    labels: Vec<bool>,
}

impl LabeledPool {
    fn new(positives: &StateActionPairs, other: &StateActionPairs) -> Self {
        Self {
            states: concatenate![Axis(0), positives.states, other.states],
            actions: concatenate![Axis(0), positives.actions, other.actions],
            labels: std::iter::repeat_n(true, positives.len())
                .chain(std::iter::repeat_n(false, other.len()))
                .collect(),
        }
    }
}

/// Evaluates one objective on full pools.
pub fn pool_loss(
    classifier: &ExpertClassifier,
    kind: LossKind,
    prior: f64,
    positives: &StateActionPairs,
    other: &StateActionPairs,
) -> Result<(f64, ClassifierGrads), ClassifierError> {
    if positives.is_empty() {
        return Err(ClassifierError::EmptyPool("positive"));
    }
    if other.is_empty() {
        return Err(ClassifierError::EmptyPool(if kind == LossKind::Bce { "negative" } else { "unlabeled" }));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(ClassifierError::Config(format!("class prior must lie in [0, 1], got {prior}")));
    }
    let pool = LabeledPool::new(positives, other);
    classifier.forward_backward(pool.states.view(), pool.actions.view(), |p| {
        objective(kind, prior, p, &pool.labels)
    })
}

/// Cross-entropy of positives against synthetic negatives.
pub fn bce_loss(
    classifier: &ExpertClassifier,
    positives: &StateActionPairs,
    negatives: &StateActionPairs,
) -> Result<(f64, ClassifierGrads), ClassifierError> {
    pool_loss(classifier, LossKind::Bce, 0.0, positives, negatives)
}

pub fn unbiased_pu_loss(
    classifier: &ExpertClassifier,
    positives: &StateActionPairs,
    unlabeled: &StateActionPairs,
    prior: f64,
) -> Result<(f64, ClassifierGrads), ClassifierError> {
    pool_loss(classifier, LossKind::Unbiased, prior, positives, unlabeled)
}

pub fn nonneg_pu_loss(
    classifier: &ExpertClassifier,
    positives: &StateActionPairs,
    unlabeled: &StateActionPairs,
    prior: f64,
) -> Result<(f64, ClassifierGrads), ClassifierError> {
    pool_loss(classifier, LossKind::NonNegative, prior, positives, unlabeled)
}

/// Minibatch Adam on the configured objective. Returns the mean batch loss per epoch.
///
/// `other` holds the synthetic negatives for [`LossKind::Bce`] and the
/// unlabeled pool for the PU objectives. Rows are reshuffled every epoch.
pub fn train<R: Rng + ?Sized>(
    classifier: &mut ExpertClassifier,
    positives: &StateActionPairs,
    other: &StateActionPairs,
    config: &PuTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ClassifierError> {
    config.validate()?;
    if positives.is_empty() {
        return Err(ClassifierError::EmptyPool("positive"));
    }
    if other.is_empty() {
        return Err(ClassifierError::EmptyPool(if config.loss == LossKind::Bce { "negative" } else { "unlabeled" }));
    }
    let pool = LabeledPool::new(positives, other);
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut enc_opt = AdamState::new(&classifier.encoder, adam);
    let mut head_opt = AdamState::new(&classifier.head, adam);
    let mut order: Vec<usize> = (0..pool.labels.len()).collect();
    let batch_size = effective_batch_size(config, order.len());
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let states = pool.states.select(Axis(0), chunk);
            let actions = pool.actions.select(Axis(0), chunk);
            let labels: Vec<bool> = chunk.iter().map(|&i| pool.labels[i]).collect();
            let (loss, grads) = classifier.forward_backward(states.view(), actions.view(), |p| {
                objective(config.loss, config.class_prior, p, &labels)
            })?;
            enc_opt.step(&mut classifier.encoder, &grads.encoder)?;
            head_opt.step(&mut classifier.head, &grads.head)?;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// The configured batch size, shrunk so an epoch over `rows` has at least
/// `min_batches_per_epoch` minibatches.
pub fn effective_batch_size(config: &PuTrainConfig, rows: usize) -> usize {
    let cap = rows.div_ceil(config.min_batches_per_epoch.max(1)).max(1);
    config.batch_size.min(cap)
}

/// [`train`] with the cross-entropy objective.
pub fn train_bce<R: Rng + ?Sized>(
    classifier: &mut ExpertClassifier,
    positives: &StateActionPairs,
    negatives: &StateActionPairs,
    config: &PuTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ClassifierError> {
    let config = PuTrainConfig {
        loss: LossKind::Bce,
        ..config.clone()
    };
    train(classifier, positives, negatives, &config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Layer};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn random_pool(n: usize, sd: usize, ad: usize, rng: &mut ChaCha8Rng) -> StateActionPairs {
        StateActionPairs {
            states: Array2::from_shape_simple_fn((n, sd), || rng.gen_range(-1.0..1.0)),
            actions: Array2::from_shape_simple_fn((n, ad), || rng.gen_range(-1.0..1.0)),
        }
    }

    fn zero_classifier(sd: usize, ad: usize) -> ExpertClassifier {
        ExpertClassifier::from_parts(
            DenseNet::zeros(&[sd, 4, 3], Activation::Tanh, Activation::Tanh),
            DenseNet::zeros(&[3 + ad, 5, 1], Activation::Relu, Activation::Sigmoid),
        )
        .unwrap()
    }

    /// Random classifier with every parameter jittered, so no ReLU sits exactly at its kink.
    fn jittered(sd: usize, ad: usize, rng: &mut ChaCha8Rng) -> ExpertClassifier {
        let mut c = ExpertClassifier::new(sd, ad, &small_arch(), rng);
        let flat: Vec<f64> = c.flatten().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        c.load_flat(&flat);
        c
    }

    fn small_arch() -> ClassifierArch {
        ClassifierArch {
            encoder_hidden: vec![5],
            latent: 3,
            head_hidden: vec![6, 4],
        }
    }

    #[test]
    fn latent_kept_below_wide_state() {
        let arch = ClassifierArch::default();
        assert_eq!(arch.latent_dim(6, 2), 5);
        assert_eq!(arch.latent_dim(100, 8), 16);
        assert_eq!(arch.latent_dim(2, 2), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = ExpertClassifier::new(6, 2, &arch, &mut rng);
        assert_eq!((c.state_dim(), c.action_dim(), c.latent_dim()), (6, 2, 5));
    }

    #[test]
    fn zero_weights_predict_half() {
        let c = zero_classifier(4, 2);
        assert_eq!(c.predict(&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn predict_is_encoder_head_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ExpertClassifier::new(5, 2, &small_arch(), &mut rng);
        let s = [0.2, -0.4, 0.9, 0.0, -1.1];
        let a = [0.3, -0.7];
        let mut input = c.encoder().forward(&s).unwrap();
        input.extend_from_slice(&a);
        let expected = c.head().forward(&input).unwrap()[0];
        let got = c.predict(&s, &a).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert_eq!(got, c.predict(&s, &a).unwrap());
    }

    #[test]
    fn predict_dimension_mismatch() {
        let c = zero_classifier(4, 2);
        assert!(c.predict(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(c.predict(&[1.0, 2.0, 3.0, 4.0], &[0.0]).is_err());
    }

    #[test]
    fn from_parts_rejects_non_sigmoid_head() {
        let enc = DenseNet::zeros(&[4, 3], Activation::Tanh, Activation::Tanh);
        let head = DenseNet::zeros(&[5, 1], Activation::Relu, Activation::Identity);
        assert!(ExpertClassifier::from_parts(enc, head).is_err());
    }

    #[test]
    fn constant_half_losses() {
        let c = zero_classifier(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pool(7, 3, 1, &mut rng);
        let u = random_pool(11, 3, 1, &mut rng);
        for prior in [0.0, 0.004, 0.3, 1.0] {
            let (l, _) = unbiased_pu_loss(&c, &p, &u, prior).unwrap();
            assert!((l - LN_2).abs() < 1e-12);
            let (l, _) = nonneg_pu_loss(&c, &p, &u, prior).unwrap();
            assert!((l - LN_2).abs() < 1e-12);
        }
        let (l, _) = bce_loss(&c, &p, &u).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_is_unlabeled_as_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = ExpertClassifier::new(3, 1, &small_arch(), &mut rng);
        let p = random_pool(5, 3, 1, &mut rng);
        let u = random_pool(9, 3, 1, &mut rng);
        let probs = c.predict_batch(u.states.view(), u.actions.view()).unwrap();
        let direct: f64 = probs.iter().map(|&f| -(1.0 - f).ln()).sum::<f64>() / 9.0;
        let (ub, gu) = unbiased_pu_loss(&c, &p, &u, 0.0).unwrap();
        let (nn, gn) = nonneg_pu_loss(&c, &p, &u, 0.0).unwrap();
        assert!((ub - direct).abs() < 1e-12);
        assert!((nn - direct).abs() < 1e-12);
        assert_eq!(gu, gn);
    }

    #[test]
    fn empty_pools_error() {
        let c = zero_classifier(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_pool(5, 3, 1, &mut rng);
        let empty = random_pool(0, 3, 1, &mut rng);
        assert!(matches!(bce_loss(&c, &p, &empty), Err(ClassifierError::EmptyPool("negative"))));
        assert!(matches!(unbiased_pu_loss(&c, &empty, &p, 0.1), Err(ClassifierError::EmptyPool("positive"))));
        assert!(unbiased_pu_loss(&c, &p, &p, 1.5).is_err());
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [LossKind::Bce, LossKind::Unbiased, LossKind::NonNegative] {
            let c = jittered(4, 2, &mut rng);
            let p = random_pool(6, 4, 2, &mut rng);
            let u = random_pool(8, 4, 2, &mut rng);
            let check = grad_check(
                &c,
                |m: &ExpertClassifier| {
                    let (l, g) = pool_loss(m, kind, 0.3, &p, &u).unwrap();
                    (l, g.flatten())
                },
                1e-4,
            );
            assert!(check.passed(), "{kind:?}: {check:?}");
        }
    }

    #[test]
    fn separable_points_are_ordered_after_training() {
        // 1-D linear classifier: encoder is the identity on one coordinate
        let enc = DenseNet::new(vec![Layer {
            weights: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let head = DenseNet::new(vec![Layer {
            weights: array![[0.0, 0.0]],
            bias: array![0.0],
            activation: Activation::Sigmoid,
        }])
        .unwrap();
        let mut c = ExpertClassifier::from_parts(enc, head).unwrap();
        let pos = StateActionPairs {
            states: array![[1.0]],
            actions: array![[0.0]],
        };
        let neg = StateActionPairs {
            states: array![[0.0]],
            actions: array![[0.0]],
        };
        let cfg = PuTrainConfig {
            epochs: 50,
            learning_rate: 0.05,
            ..PuTrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hist = train_bce(&mut c, &pos, &neg, &cfg, &mut rng).unwrap();
        assert!(c.predict(&[1.0], &[0.0]).unwrap() > c.predict(&[0.0], &[0.0]).unwrap());
        assert!(hist.last().unwrap() < hist.first().unwrap());
    }

    #[test]
    fn identical_pools_cannot_beat_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pool = random_pool(64, 3, 1, &mut rng);
        let mut c = ExpertClassifier::new(3, 1, &small_arch(), &mut rng);
        let cfg = PuTrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            ..PuTrainConfig::default()
        };
        let hist = train_bce(&mut c, &pool, &pool, &cfg, &mut rng).unwrap();
        assert!(hist.iter().all(|&l| l >= LN_2), "{hist:?}");
        // on the full pools -log F - log(1-F) per point is minimized at F = 1/2
        let (full, _) = bce_loss(&c, &pool, &pool).unwrap();
        assert!(full >= 2.0 * LN_2 - 1e-12, "{full}");
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let p = random_pool(40, 3, 2, &mut rng);
            let n = random_pool(40, 3, 2, &mut rng);
            let mut c = ExpertClassifier::new(3, 2, &small_arch(), &mut rng);
            let cfg = PuTrainConfig {
                batch_size: 16,
                epochs: 3,
                ..PuTrainConfig::default()
            };
            let h = train_bce(&mut c, &p, &n, &cfg, &mut rng).unwrap();
            (c, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let bad = PuTrainConfig {
            epochs: 0,
            ..PuTrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PuTrainConfig {
            class_prior: -0.1,
            ..PuTrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = ExpertClassifier::new(6, 2, &ClassifierArch::default(), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.json");
        c.save(&path).unwrap();
        assert_eq!(ExpertClassifier::load(&path).unwrap(), c);
    }
}
