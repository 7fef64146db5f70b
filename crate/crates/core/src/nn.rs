//! Dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Everything trainable in the crate (the expert classifier and the cloned
//! policy) is assembled from [`DenseNet`]. Batches are row-major: one sample
//! per row, so a layer computes `act(x · Wᵀ + b)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower/upper clamp applied to sigmoid outputs so they stay strictly inside (0, 1).
pub const SIGMOID_EDGE: f64 = 1e-15;

/// Probability clamp applied before taking logarithms in cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced in layer {layer}")]
    NonFinite { layer: usize },
    #[error("network must have at least one layer")]
    Empty,
    #[error("gradient bundle is not shape-congruent with its network")]
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                let y = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                y.clamp(SIGMOID_EDGE, 1.0 - SIGMOID_EDGE)
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for DenseNet {
    type Error = NnError;

    fn try_from(layers: Vec<Layer>) -> Result<Self, Self::Error> {
        DenseNet::new(layers)
    }
}

impl From<DenseNet> for Vec<Layer> {
    fn from(net: DenseNet) -> Self {
        net.layers
    }
}

/// Activations recorded by [`DenseNet::forward_trace`], consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(NnError::Dimension {
                    context: "layer bias",
                    expected: layer.output_dim(),
                    got: layer.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(NnError::Dimension {
                    context: "layer chaining",
                    expected: layers[i - 1].output_dim(),
                    got: layer.input_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// `dims` lists every width from input to output; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-limit..=limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    /// Same topology as [`DenseNet::glorot`] with every parameter set to zero.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weights: Array2::zeros((dims[i + 1], dims[i])),
                bias: Array1::zeros(dims[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let batch = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(inputs.ncols())?;
        let mut x = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer_forward(layer, x.view());
            check_finite(&x, i)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, inputs: ArrayView2<f64>) -> Result<ForwardTrace, NnError> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer_forward(layer, activations[i].view());
            check_finite(&y, i)?;
            activations.push(y);
        }
        Ok(ForwardTrace { activations })
    }

    /// Gradient of `upstream · output` with respect to every parameter, for one sample.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradBundle, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::Dimension {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let trace = self.forward_trace(x)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous slice");
        Ok(self.backward_batch(&trace, up)?.0)
    }

    /// Backpropagates a batch of output gradients through a recorded trace.
    ///
    /// Parameter gradients are summed over the batch; the second value is the
    /// gradient with respect to each input row.
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<f64>,
    ) -> Result<(GradBundle, Array2<f64>), NnError> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(NnError::Dimension {
                context: "upstream gradient",
                expected: out.ncols(),
                got: upstream.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[i + 1];
            let act = layer.activation;
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(y)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            let x = &trace.activations[i];
            let weights = delta.t().dot(x);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights);
            grads.push(LayerGrad { weights, bias });
            delta = next;
        }
        grads.reverse();
        Ok((GradBundle { layers: grads }, delta))
    }

    fn check_input(&self, got: usize) -> Result<(), NnError> {
        if got != self.input_dim() {
            return Err(NnError::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }
}

fn layer_forward(layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.bias;
    let act = layer.activation;
    if act != Activation::Identity {
        z.mapv_inplace(|v| act.apply(v));
    }
    z
}

fn check_finite(x: &Array2<f64>, layer: usize) -> Result<(), NnError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-parameter gradients mirroring a [`DenseNet`]'s layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<LayerGrad>,
}

impl GradBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.dim() == l.bias.dim())
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|&v| v == 0.0))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &GradBundle) {
        for (g, o) in self.layers.iter_mut().zip(&other.layers) {
            g.weights += &o.weights;
            g.bias += &o.bias;
        }
    }

    /// Flattens in the same order as [`Parameters::flatten`] for [`DenseNet`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weights.iter());
            out.extend(g.bias.iter());
        }
        out
    }
}

/// Models whose parameters can be viewed as one flat vector.
pub trait Parameters: Clone {
    fn flatten(&self) -> Vec<f64>;
    fn load_flat(&mut self, flat: &[f64]);
}

impl Parameters for DenseNet {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
    }
}

/// Binary cross-entropy of a single prediction and its derivative with respect to `prob`.
pub fn bce_loss_and_grad(prob: f64, label: bool) -> (f64, f64) {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment accumulators for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: GradBundle,
    second: GradBundle,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: GradBundle::zeros_like(net),
            second: GradBundle::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update.
    ///
    /// An all-zero gradient bundle leaves both the parameters and the state
    /// untouched.
    pub fn step(&mut self, net: &mut DenseNet, grads: &GradBundle) -> Result<(), NnError> {
        if !grads.is_congruent(net) || !self.first.is_congruent(net) {
            return Err(NnError::Shape);
        }
        if grads.is_zero() {
            return Ok(());
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares analytic gradients against central finite differences.
///
/// The relative error of parameter `i` is `|g_i − n_i| / max(|n_i|, floor)`
/// where `n_i` is the numeric derivative and `floor` is `1e-3` times the
/// largest numeric derivative (and at least `1e-10`), so components that are
/// essentially zero are judged on the scale of the whole gradient.
pub fn grad_check<M, F>(model: &M, loss_fn: F, tolerance: f64) -> GradCheck
where
    M: Parameters,
    F: Fn(&M) -> (f64, Vec<f64>),
{
    const STEP: f64 = 1e-5;
    let (_, analytic) = loss_fn(model);
    let base = model.flatten();
    assert_eq!(analytic.len(), base.len(), "analytic gradient length");
    let mut probe = model.clone();
    let mut params = base.clone();
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            params[i] = base[i] + STEP;
            probe.load_flat(&params);
            let plus = loss_fn(&probe).0;
            params[i] = base[i] - STEP;
            probe.load_flat(&params);
            let minus = loss_fn(&probe).0;
            params[i] = base[i];
            (plus - minus) / (2.0 * STEP)
        })
        .collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-10);
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / n.abs().max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        tolerance,
    }
}
