use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// One set of network parameters: a weight matrix `(fan_in × fan_out)` and a
/// `1 × fan_out` bias row per layer. Used for live weights, the EMA shadow,
/// gradients and optimizer velocity alike.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl Params {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Matrix::zeros(1, n)).collect();
        Self { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    /// All parameter matrices, weights first then biases.
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn check_shape(&self, other: &Params, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: parameter shapes differ")))
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) -> Result<()> {
        self.check_shape(other, "axpy")?;
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors_mut().for_each(|m| m.scale(alpha));
    }

    /// Multiplies weight matrices (not biases) by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|m| m.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Matrix::is_finite)
    }

    pub fn len(&self) -> usize {
        self.tensors().map(|m| m.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view of every scalar, in `tensors()` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|m| m.data().iter().copied()).collect()
    }
}

/// Activations recorded by a training forward pass; consumed by
/// [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// Input to each layer: the batch itself, then each hidden ReLU output.
    layer_inputs: Vec<Matrix>,
    logits: Option<Matrix>,
}

impl Tape {
    pub fn logits(&self) -> Result<&Matrix> {
        self.logits
            .as_ref()
            .ok_or_else(|| Error::State("tape holds no forward pass".into()))
    }

    pub fn batch_rows(&self) -> usize {
        self.layer_inputs.first().map_or(0, Matrix::rows)
    }
}

/// Fully-connected network: ReLU on hidden layers, identity on the output
/// layer. Keeps an exponential-moving-average shadow of its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    live: Params,
    ema: Params,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, EMA shadow initialised as a copy.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut live = Params::zeros(layer_sizes);
        for w in &mut live.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            ema: live.clone(),
            live,
        })
    }

    /// Builds a network from explicit parameters (shadow = copy).
    pub fn from_params(layer_sizes: &[usize], params: Params) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        params.check_shape(&Params::zeros(layer_sizes), "from_params")?;
        if !params.is_finite() {
            return Err(Error::Argument("parameters must be finite".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            ema: params.clone(),
            live: params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn params(&self) -> &Params {
        &self.live
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.live
    }

    pub fn ema_params(&self) -> &Params {
        &self.ema
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for `batch`; `use_ema` selects the shadow parameters.
    pub fn forward(&self, batch: &Matrix, use_ema: bool) -> Result<Matrix> {
        self.check_batch(batch)?;
        let params = if use_ema { &self.ema } else { &self.live };
        let last = params.weights.len() - 1;
        let mut act = affine(batch, &params.weights[0], &params.biases[0])?;
        for l in 1..=last {
            relu_in_place(&mut act);
            act = affine(&act, &params.weights[l], &params.biases[l])?;
        }
        Ok(act)
    }

    /// Forward pass with live parameters, recording activations for backward.
    pub fn forward_tape(&self, batch: &Matrix) -> Result<Tape> {
        self.check_batch(batch)?;
        let p = &self.live;
        let last = p.weights.len() - 1;
        let mut layer_inputs = Vec::with_capacity(last + 1);
        layer_inputs.push(batch.clone());
        for l in 0..last {
            let mut z = affine(&layer_inputs[l], &p.weights[l], &p.biases[l])?;
            relu_in_place(&mut z);
            layer_inputs.push(z);
        }
        let logits = affine(&layer_inputs[last], &p.weights[last], &p.biases[last])?;
        Ok(Tape {
            layer_inputs,
            logits: Some(logits),
        })
    }

    /// Parameter gradients of a scalar loss, given its gradient with respect
    /// to the logits of the taped batch. Per-row contributions are summed, so
    /// a mean loss must already carry its `1/n` factor in `grad_logits`.
    pub fn backward(&self, tape: &Tape, grad_logits: &Matrix) -> Result<Params> {
        let logits = tape.logits()?;
        if logits.shape() != grad_logits.shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} does not match taped logits {:?}",
                grad_logits.shape(),
                logits.shape()
            )));
        }
        if tape.layer_inputs.len() != self.live.weights.len() {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        let mut grads = self.live.zeros_like();
        let mut delta = grad_logits.clone();
        for l in (0..self.live.weights.len()).rev() {
            let input = &tape.layer_inputs[l];
            grads.weights[l] = input.t_matmul(&delta)?;
            let db = grads.biases[l].data_mut();
            for row in delta.row_iter() {
                for (b, &d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l > 0 {
                let mut prev = delta.matmul_t(&self.live.weights[l])?;
                // ReLU derivative: the layer input is positive exactly where
                // the pre-activation was.
                for (g, &a) in prev.data_mut().iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// `shadow ← m·shadow + (1−m)·live`
    pub fn ema_update(&mut self, momentum: f64) {
        for (s, l) in self.ema.tensors_mut().zip(self.live.tensors()) {
            for (s, &l) in s.data_mut().iter_mut().zip(l.data()) {
                *s = momentum * *s + (1.0 - momentum) * l;
            }
        }
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Argument(
            "a network needs at least an input and an output size".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Argument("layer sizes must be positive".into()));
    }
    Ok(())
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut z = Matrix::zeros(x.rows(), w.cols());
    for r in 0..z.rows() {
        z.row_mut(r).copy_from_slice(b.data());
    }
    x.matmul_acc(w, &mut z)?;
    Ok(z)
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-wise softmax with max subtraction. Entries are floored at the smallest
/// positive normal `f64`, so every probability is strictly positive.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_row(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = (*v / sum).max(f64::MIN_POSITIVE);
    }
}

/// Row-wise log-softmax via log-sum-exp.
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
