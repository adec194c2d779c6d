//! Small dense Q-networks with hand-written backpropagation and Adam.
//!
//! Every hidden layer is followed by `tanh`; the output layer is linear and
//! yields one value per action. All arithmetic is `f64`.
//!
//! Shape mismatches are programmer errors and panic via `assert!`.

use std::fmt::Write as _;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use thiserror::Error;

/// Hidden layer widths of the Q-networks used by every agent.
pub const HIDDEN_DIMS: [usize; 2] = [100, 50];

const CHECKPOINT_MAGIC: &str = "qnetwork v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("training diverged at optimizer step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("training diverged at optimizer step {step}: non-finite parameter in layer {layer}")]
    NonFiniteParameter { step: u64, layer: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs x outputs`: row `i` holds the weights leaving input `i`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward(&self, x: &[f64], out: &mut [f64], squash: bool) {
        out.copy_from_slice(&self.bias);
        for (&xi, row) in x.iter().zip(self.weights.chunks_exact(self.outputs)) {
            if xi != 0.0 {
                axpy(xi, row, out);
            }
        }
        if squash {
            tanh_in_place(out);
        }
    }
}

/// `tanh` over a slice, written branch-free so it vectorizes. Agrees with
/// `f64::tanh` to within a few ulps.
pub fn tanh_in_place(values: &mut [f64]) {
    for v in values {
        *v = tanh(*v);
    }
}

#[inline(always)]
fn tanh(x: f64) -> f64 {
    // tanh|x| = 1 - 2 / (exp(2|x|) + 1); beyond |x| = 20 the result rounds to 1.
    let u = (2.0 * x.abs()).min(40.0);
    let e = exp_small(u);
    (1.0 - 2.0 / (e + 1.0)).copysign(x)
}

/// `exp(u)` for `u` in `[0, 40]`: Cody-Waite reduction to `|r| <= ln2/2`,
/// then a degree-13 Taylor polynomial.
#[inline(always)]
fn exp_small(u: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let shifted = u * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (u - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k_bits = shifted.to_bits().wrapping_sub(SHIFTER.to_bits());
    p * f64::from_bits((k_bits + 1023) << 52)
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Feed-forward Q-network: `tanh` hidden layers and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Layer>,
}

impl QNetwork {
    /// The standard agent network: `input_dim -> 100 -> 50 -> action_count`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, action_count: usize, rng: &mut R) -> Self {
        Self::with_hidden(input_dim, &HIDDEN_DIMS, action_count, rng)
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn with_hidden<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], action_count: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, hidden, action_count);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        net
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], action_count: usize) -> Self {
        assert!(input_dim > 0 && action_count > 0, "network dimensions must be positive");
        assert!(hidden.iter().all(|&h| h > 0), "hidden widths must be positive");
        let dims: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([action_count]).collect();
        QNetwork { layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect() }
    }

    /// `[input, hidden..., actions]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn action_count(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Q-values for one state.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::for_net(self);
        self.forward_with(x, &mut scratch).to_vec()
    }

    /// Forward pass keeping every layer's activations in `scratch`;
    /// returns the output slice.
    pub fn forward_with<'s>(&self, x: &[f64], scratch: &'s mut Scratch) -> &'s [f64] {
        assert_eq!(x.len(), self.input_dim(), "input length mismatch");
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = scratch.acts.split_at_mut(l);
            let input = if l == 0 { x } else { &before[l - 1] };
            layer.forward(input, &mut rest[0], l != last);
        }
        &scratch.acts[last]
    }

    /// Parameter `idx` of layer `l`, counting weights first, then biases.
    fn param_mut(&mut self, l: usize, idx: usize) -> &mut f64 {
        let layer = &mut self.layers[l];
        let n_w = layer.weights.len();
        if idx < n_w {
            &mut layer.weights[idx]
        } else {
            &mut layer.bias[idx - n_w]
        }
    }

    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.dims(), other.dims(), "cannot copy between differently shaped networks");
        self.clone_from(other);
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    /// FNV-1a over the raw bits of every parameter, for equality checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for p in l.weights.iter().chain(&l.bias) {
                for byte in p.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Text checkpoint: a magic line, a `dims` header, then one parameter per
    /// line, layer by layer, weights row-major followed by biases.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        let dims: Vec<String> = self.dims().iter().map(usize::to_string).collect();
        writeln!(s, "dims {}", dims.join(" ")).unwrap();
        for l in &self.layers {
            for p in l.weights.iter().chain(&l.bias) {
                writeln!(s, "{p:e}").unwrap();
            }
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let err = |m: String| NnError::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(err(format!("missing '{CHECKPOINT_MAGIC}' header")));
        }
        let dims_line = lines.next().ok_or_else(|| err("missing dims line".into()))?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| err("malformed dims line".into()))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| err(format!("bad dimension {d:?}"))))
            .collect::<Result<_, _>>()?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(err(format!("invalid dims {dims:?}")));
        }
        let mut net = QNetwork::zeros(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1]);
        let mut values = lines.filter(|l| !l.trim().is_empty()).map(|l| {
            l.trim().parse::<f64>().map_err(|_| err(format!("bad parameter {l:?}")))
        });
        for layer in &mut net.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = values.next().ok_or_else(|| err("too few parameters".into()))??;
            }
        }
        if values.next().is_some() {
            return Err(err("too many parameters".into()));
        }
        Ok(net)
    }
}

/// Reusable per-layer activation buffers for single-state passes.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn for_net(net: &QNetwork) -> Self {
        Scratch { acts: net.layers.iter().map(|l| vec![0.0; l.outputs]).collect() }
    }
}

/// Reusable `batch x width` buffers for minibatch passes.
#[derive(Debug, Clone, Default)]
pub struct BatchScratch {
    input: Array2<f64>,
    acts: Vec<Array2<f64>>,
    deltas: Vec<Array2<f64>>,
}

impl BatchScratch {
    fn prepare(&mut self, net: &QNetwork, rows: usize) {
        if self.input.dim() != (rows, net.input_dim()) {
            self.input = Array2::zeros((rows, net.input_dim()));
        }
        if self.acts.len() != net.layers.len() || self.acts[0].nrows() != rows {
            self.acts = net.layers.iter().map(|l| Array2::zeros((rows, l.outputs))).collect();
            self.deltas = self.acts.clone();
        }
    }
}

impl QNetwork {
    fn weight_view(&self, l: usize) -> ArrayView2<'_, f64> {
        let layer = &self.layers[l];
        ArrayView2::from_shape((layer.inputs, layer.outputs), &layer.weights).expect("weight shape")
    }

    /// Q-values for a batch of states, one row per state.
    pub fn forward_batch<'s>(&self, inputs: &[&[f64]], scratch: &'s mut BatchScratch) -> ArrayView2<'s, f64> {
        scratch.prepare(self, inputs.len());
        for (mut row, x) in scratch.input.rows_mut().into_iter().zip(inputs) {
            assert_eq!(x.len(), self.input_dim(), "input length mismatch");
            row.as_slice_mut().expect("contiguous row").copy_from_slice(x);
        }
        let last = self.layers.len() - 1;
        for l in 0..=last {
            let (before, rest) = scratch.acts.split_at_mut(l);
            let prev = if l == 0 { scratch.input.view() } else { before[l - 1].view() };
            let out = &mut rest[0];
            out.assign(&ArrayView1::from(&self.layers[l].bias[..]));
            general_mat_mul(1.0, &prev, &self.weight_view(l), 1.0, out);
            if l != last {
                tanh_in_place(out.as_slice_mut().expect("contiguous activations"));
            }
        }
        scratch.acts[last].view()
    }
}

/// Parameter-shaped accumulator (gradients, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Gradients { layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }
}

/// One regression example: push `Q(input)[action]` toward `target`.
#[derive(Debug, Clone, Copy)]
pub struct TdSample<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Mean squared error of the chosen-action values against the targets.
pub fn loss(net: &QNetwork, batch: &[TdSample<'_>]) -> f64 {
    let mut scratch = BatchScratch::default();
    let inputs: Vec<&[f64]> = batch.iter().map(|s| s.input).collect();
    let q = net.forward_batch(&inputs, &mut scratch);
    let total: f64 = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let e = q[[i, s.action]] - s.target;
            e * e
        })
        .sum();
    total / batch.len() as f64
}

/// Loss and its gradient with respect to every parameter.
pub fn gradients(net: &QNetwork, batch: &[TdSample<'_>]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = BatchScratch::default();
    let loss = compute_gradients(net, batch, &mut scratch, &mut grads);
    (loss, grads)
}

/// Overwrites `grads` with the gradient of the batch loss; returns the loss.
fn compute_gradients(net: &QNetwork, batch: &[TdSample<'_>], scratch: &mut BatchScratch, grads: &mut Gradients) -> f64 {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let last = net.layers.len() - 1;
    let inputs: Vec<&[f64]> = batch.iter().map(|s| s.input).collect();
    net.forward_batch(&inputs, scratch);

    let mut total = 0.0;
    {
        let (q, out_delta) = (&scratch.acts[last], &mut scratch.deltas[last]);
        out_delta.fill(0.0);
        for (i, sample) in batch.iter().enumerate() {
            assert!(sample.action < net.action_count(), "action {} out of range", sample.action);
            let err = q[[i, sample.action]] - sample.target;
            total += err * err;
            out_delta[[i, sample.action]] = 2.0 * err / n;
        }
    }

    for l in (0..=last).rev() {
        let (lower, upper) = scratch.deltas.split_at_mut(l);
        let delta = &upper[0];
        let prev = if l == 0 { scratch.input.view() } else { scratch.acts[l - 1].view() };
        let g = &mut grads.layers[l];
        let mut gw = ArrayViewMut2::from_shape((g.inputs, g.outputs), &mut g.weights).expect("gradient shape");
        general_mat_mul(1.0, &prev.t(), delta, 0.0, &mut gw);
        for (b, col) in g.bias.iter_mut().zip(delta.columns()) {
            *b = col.sum();
        }
        if l > 0 {
            let back = &mut lower[l - 1];
            general_mat_mul(1.0, delta, &net.weight_view(l).t(), 0.0, back);
            back.zip_mut_with(&scratch.acts[l - 1], |d, &a| *d *= 1.0 - a * a);
        }
    }
    total / n
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn adam(net: &QNetwork, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let step = lr / (1.0 - b1.powi(t));
        let inv_sqrt_c2 = 1.0 / (1.0 - b2.powi(t)).sqrt();
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() * inv_sqrt_c2 + eps);
            }
        };
        for (((layer, g), m), v) in
            net.layers.iter_mut().zip(&grads.layers).zip(&mut self.first.layers).zip(&mut self.second.layers)
        {
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
    }
}

/// Reusable buffers for [`td_step_with`].
#[derive(Debug, Clone)]
pub struct TrainScratch {
    scratch: BatchScratch,
    grads: Gradients,
}

impl TrainScratch {
    pub fn for_net(net: &QNetwork) -> Self {
        TrainScratch { scratch: BatchScratch::default(), grads: Gradients::zeros_like(net) }
    }
}

/// One Adam step on the mean squared TD error. Returns the pre-update loss.
pub fn td_step(net: &mut QNetwork, opt: &mut OptimizerState, batch: &[TdSample<'_>]) -> Result<f64, NnError> {
    let mut buffers = TrainScratch::for_net(net);
    td_step_with(net, opt, batch, &mut buffers)
}

pub fn td_step_with(
    net: &mut QNetwork,
    opt: &mut OptimizerState,
    batch: &[TdSample<'_>],
    buffers: &mut TrainScratch,
) -> Result<f64, NnError> {
    let loss = compute_gradients(net, batch, &mut buffers.scratch, &mut buffers.grads);
    if !loss.is_finite() {
        return Err(NnError::Divergence { step: opt.step, loss });
    }
    opt.apply(net, &buffers.grads);
    if let Some(layer) = net.layers.iter().position(|l| !l.weights.iter().chain(&l.bias).all(|p| p.is_finite())) {
        return Err(NnError::NonFiniteParameter { step: opt.step, layer });
    }
    Ok(loss)
}

/// Step size used by [`grad_check`]'s central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Largest relative disagreement between backpropagation and central finite
/// differences over every parameter.
pub fn grad_check(net: &QNetwork, batch: &[TdSample<'_>]) -> f64 {
    let (_, analytic) = gradients(net, batch);
    gradient_error(net, batch, &analytic)
}

/// Compares a supplied gradient against central finite differences.
/// The per-parameter error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_error(net: &QNetwork, batch: &[TdSample<'_>], analytic: &Gradients) -> f64 {
    let h = GRAD_CHECK_STEP;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut analytic_iter = analytic.params();
    for l in 0..net.layers.len() {
        let n_w = net.layers[l].weights.len();
        for idx in 0..n_w + net.layers[l].bias.len() {
            let original = *probe.param_mut(l, idx);
            *probe.param_mut(l, idx) = original + h;
            let plus = loss(&probe, batch);
            *probe.param_mut(l, idx) = original - h;
            let minus = loss(&probe, batch);
            *probe.param_mut(l, idx) = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = *analytic_iter.next().expect("gradient shape mismatch");
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
