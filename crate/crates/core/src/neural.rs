//! Dense feedforward networks with exact reverse-mode gradients, a bounded
//! sigmoid output head, and minibatch SGD/Adam training that can
//! backpropagate through a frozen downstream network.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, sqrt, tanh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Output transform applied to the last layer's raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// `lo + (hi - lo)·σ(raw)` per coordinate.
    RangeSigmoid {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

/// `lo + (hi - lo) / (1 + e^(-raw))`.
#[inline]
pub fn range_sigmoid(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(raw)
}

/// Per-coordinate affine normalization `(x - offset)·scale` applied before
/// the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Map each `[lo, hi]` onto `[-1, 1]`; degenerate intervals map to 0.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Self {
        let offset = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let scale = lo.iter().zip(hi).map(|(l, h)| if h > l { 2.0 / (h - l) } else { 0.0 }).collect();
        InputScaling { offset, scale }
    }
}

/// Weights are row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        let n_in = x.len();
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(i, b)| {
            let row = &self.weights[i * n_in..(i + 1) * n_in];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    #[serde(default)]
    pub input_scaling: Option<InputScaling>,
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// Input to each layer; `acts[0]` is the scaled network input.
    acts: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Randomly initialized network: weights `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn new(dims: &[usize], activation: Activation, head: Head, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("dims", "need at least input and output sizes, all positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let a = 1.0 / sqrt(w[0] as f64);
                let mut layer = Layer::zeros(w[0], w[1]);
                for v in layer.weights.iter_mut() {
                    *v = rng.random_range(-a..a);
                }
                layer
            })
            .collect();
        let net = Mlp { dims: dims.to_vec(), activation, head, input_scaling: None, layers };
        net.validate()?;
        Ok(net)
    }

    /// Single linear layer with identity weights.
    pub fn identity(n: usize) -> Self {
        let mut layer = Layer::zeros(n, n);
        for i in 0..n {
            layer.weights[i * n + i] = 1.0;
        }
        Mlp {
            dims: vec![n, n],
            activation: Activation::Tanh,
            head: Head::Linear,
            input_scaling: None,
            layers: vec![layer],
        }
    }

    pub fn with_input_scaling(mut self, scaling: InputScaling) -> Result<Self> {
        self.input_scaling = Some(scaling);
        self.validate()?;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.layers.len() != self.dims.len() - 1 {
            return Err(Error::invalid("dims", "layer count does not match dims"));
        }
        for (l, w) in self.layers.iter().zip(self.dims.windows(2)) {
            if l.biases.len() != w[1] || l.weights.len() != w[0] * w[1] {
                return Err(Error::invalid("layers", "weight shape does not match dims"));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::invalid("layers", "non-finite weight"));
            }
        }
        if let Head::RangeSigmoid { lo, hi } = &self.head {
            if lo.len() != self.output_dim() || hi.len() != self.output_dim() {
                return Err(Error::invalid("head", "bounds length differs from output size"));
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                return Err(Error::invalid("head", "range bounds need lo < hi"));
            }
        }
        if let Some(s) = &self.input_scaling {
            if s.offset.len() != self.input_dim() || s.scale.len() != self.input_dim() {
                return Err(Error::invalid("input_scaling", "length differs from input size"));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = Trace::default();
        self.forward_trace(x, &mut trace);
        Ok(trace.output)
    }

    /// Forward pass recording everything `backward` needs. Input length is
    /// not checked.
    pub fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        let n = self.layers.len();
        trace.acts.resize_with(n, Vec::new);
        trace.pre.resize_with(n, Vec::new);
        let a0 = &mut trace.acts[0];
        a0.clear();
        match &self.input_scaling {
            Some(s) => a0.extend(x.iter().zip(&s.offset).zip(&s.scale).map(|((v, o), c)| (v - o) * c)),
            None => a0.extend_from_slice(x),
        }
        for l in 0..n {
            let (before, after) = trace.acts.split_at_mut(l + 1);
            let pre = &mut trace.pre[l];
            self.layers[l].affine(&before[l], pre);
            if l + 1 < n {
                let next = &mut after[0];
                next.clear();
                next.extend(pre.iter().map(|&z| self.activation.apply(z)));
            }
        }
        let raw = &trace.pre[n - 1];
        trace.output.clear();
        match &self.head {
            Head::Linear => trace.output.extend_from_slice(raw),
            Head::RangeSigmoid { lo, hi } => {
                trace.output.extend(raw.iter().zip(lo.iter().zip(hi)).map(|(&r, (&l, &h))| range_sigmoid(r, l, h)))
            }
        }
    }

    /// Backpropagate `d_out = ∂L/∂output` through a recorded pass.
    /// Accumulates parameter gradients into `grads` when given and returns
    /// `∂L/∂input` in unscaled input coordinates.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], mut grads: Option<&mut Gradients>) -> Vec<f64> {
        let n = self.layers.len();
        let raw = &trace.pre[n - 1];
        let mut delta: Vec<f64> = match &self.head {
            Head::Linear => d_out.to_vec(),
            Head::RangeSigmoid { lo, hi } => d_out
                .iter()
                .zip(raw)
                .zip(lo.iter().zip(hi))
                .map(|((&g, &r), (&l, &h))| {
                    let s = sigmoid(r);
                    g * (h - l) * s * (1.0 - s)
                })
                .collect(),
        };
        let mut d_in = Vec::new();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let a = &trace.acts[l];
            let n_in = a.len();
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                for (i, &d) in delta.iter().enumerate() {
                    gl.biases[i] += d;
                    let row = &mut gl.weights[i * n_in..(i + 1) * n_in];
                    for (w, &x) in row.iter_mut().zip(a) {
                        *w += d * x;
                    }
                }
            }
            d_in.clear();
            d_in.resize(n_in, 0.0);
            for (i, &d) in delta.iter().enumerate() {
                let row = &layer.weights[i * n_in..(i + 1) * n_in];
                for (acc, &w) in d_in.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            if l > 0 {
                let z = &trace.pre[l - 1];
                delta.clear();
                delta.extend(d_in.iter().zip(z).zip(a).map(|((&g, &z), &a)| g * self.activation.derivative(z, a)));
            }
        }
        if let Some(s) = &self.input_scaling {
            for (g, c) in d_in.iter_mut().zip(&s.scale) {
                *g *= c;
            }
        }
        d_in
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { layers: self.dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    /// All weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in self.layers.iter_mut() {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

/// Same shape as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }
}

fn check_batch(net: &Mlp, tail: Option<&Mlp>, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Dimension { expected: inputs.len(), got: targets.len() });
    }
    let out_dim = match tail {
        Some(t) => {
            if t.input_dim() != net.output_dim() {
                return Err(Error::Dimension { expected: t.input_dim(), got: net.output_dim() });
            }
            t.output_dim()
        }
        None => net.output_dim(),
    };
    for (x, y) in inputs.iter().zip(targets) {
        net.check_input(x)?;
        if y.len() != out_dim {
            return Err(Error::Dimension { expected: out_dim, got: y.len() });
        }
    }
    Ok(())
}

/// Mean squared error over all batch entries and output coordinates, and
/// its gradient with respect to `net`'s parameters.
pub fn loss_and_grad(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Gradients)> {
    composite_loss_and_grad(net, None, inputs, targets)
}

/// As [`loss_and_grad`], with the loss measured on `tail(net(x))`. The tail
/// contributes to the chain rule but receives no gradients.
pub fn composite_loss_and_grad(
    net: &Mlp,
    tail: Option<&Mlp>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(f64, Gradients)> {
    check_batch(net, tail, inputs, targets)?;
    let mut grads = net.zero_gradients();
    let mut ws = Workspace::default();
    let loss = accumulate(net, tail, inputs.iter().zip(targets), &mut grads, &mut ws);
    Ok((loss, grads))
}

#[derive(Default)]
struct Workspace {
    head: Trace,
    tail: Trace,
    d_out: Vec<f64>,
}

fn accumulate<'a>(
    net: &Mlp,
    tail: Option<&Mlp>,
    batch: impl ExactSizeIterator<Item = (&'a Vec<f64>, &'a Vec<f64>)>,
    grads: &mut Gradients,
    ws: &mut Workspace,
) -> f64 {
    let b = batch.len();
    let out_dim = tail.map_or(net.output_dim(), Mlp::output_dim);
    let norm = 1.0 / (b * out_dim) as f64;
    let mut loss = 0.0;
    for (x, y) in batch {
        net.forward_trace(x, &mut ws.head);
        let pred = match tail {
            Some(t) => {
                t.forward_trace(&ws.head.output, &mut ws.tail);
                &ws.tail.output
            }
            None => &ws.head.output,
        };
        ws.d_out.clear();
        for (p, t) in pred.iter().zip(y) {
            let r = p - t;
            loss += r * r * norm;
            ws.d_out.push(2.0 * r * norm);
        }
        let d_mid = match tail {
            Some(t) => t.backward(&ws.tail, &ws.d_out, None),
            None => core::mem::take(&mut ws.d_out),
        };
        net.backward(&ws.head, &d_mid, Some(grads));
    }
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub loss: Loss,
    /// Learning rate multiplier reached at the last epoch (exponential
    /// schedule); 1 keeps the rate constant.
    #[serde(default = "one")]
    pub final_lr_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 100,
            seed: 0,
            optimizer: Optimizer::Adam,
            loss: Loss::Mse,
            final_lr_factor: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if !(self.final_lr_factor > 0.0) {
            return Err(Error::invalid("final_lr_factor", "must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_factor == 1.0 {
            return self.learning_rate;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * crate::math::powf(self.final_lr_factor, frac)
    }
}

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

fn apply_update(net: &mut Mlp, grads: &Gradients, lr: f64, opt: Optimizer, adam: &mut AdamState) {
    match opt {
        Optimizer::Sgd => {
            for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
                for (p, d) in l.weights.iter_mut().zip(&g.weights).chain(l.biases.iter_mut().zip(&g.biases)) {
                    *p -= lr * d;
                }
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - libm::pow(B1, adam.t as f64);
            let c2 = 1.0 - libm::pow(B2, adam.t as f64);
            for (((l, g), m), v) in
                net.layers.iter_mut().zip(&grads.layers).zip(adam.m.iter_mut()).zip(adam.v.iter_mut())
            {
                let params = l.weights.iter_mut().chain(l.biases.iter_mut());
                let gs = g.weights.iter().chain(&g.biases);
                let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
                let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
                for (((p, &d), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                    *mi = B1 * *mi + (1.0 - B1) * d;
                    *vi = B2 * *vi + (1.0 - B2) * d * d;
                    let mh = *mi / c1;
                    let vh = *vi / c2;
                    *p -= lr * mh / (sqrt(vh) + EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

/// Minibatch training on mean squared error. With `frozen_tail`, the loss is
/// taken on `frozen_tail(net(x))`; the tail itself is never modified.
pub fn train(
    net: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
    frozen_tail: Option<&Mlp>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_batch(net, frozen_tail, inputs, targets)?;
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut adam = AdamState { m: net.zero_gradients().layers, v: net.zero_gradients().layers, t: 0 };
    let mut grads = net.zero_gradients();
    let mut ws = Workspace::default();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            for l in grads.layers.iter_mut() {
                l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|v| *v = 0.0);
            }
            let batch = chunk.iter().map(|&i| (&inputs[i], &targets[i]));
            let loss = accumulate(&net, frozen_tail, batch, &mut grads, &mut ws);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_idx });
            }
            apply_update(&mut net, &grads, lr, config.optimizer, &mut adam);
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    if net.validate().is_err() {
        return Err(Error::Diverged { epoch: config.epochs, batch: 0 });
    }
    Ok(TrainOutcome { net, history })
}
