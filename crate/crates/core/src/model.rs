//! Classification models trained locally by each client.
//!
//! Two models share one flat parameter layout convention: every dense layer
//! is stored row-major as `out × (in + 1)`, the last column holding the bias
//! (an implicit constant-1 input feature).
//!
//! - Logistic: one layer, `num_classes × (input_dim + 1)`.
//! - MLP: `hidden × (input_dim + 1)` followed by `num_classes × (hidden + 1)`,
//!   with a tanh hidden activation.
//!
//! Both are trained with plain mini-batch SGD on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataShard, Dataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Ignored for [`ModelKind::Logistic`].
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            num_classes,
            hidden_dim: 0,
            init_seed: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_dim,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, init_seed: u64) -> Self {
        self.init_seed = init_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be at least 2".into()));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::InvalidSpec("hidden_dim must be at least 1 for an mlp".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => (self.input_dim + 1) * self.num_classes,
            ModelKind::Mlp => (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes,
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: data.input_dim(),
            });
        }
        if data.num_classes() > self.num_classes {
            return Err(Error::InvalidParameter(format!(
                "dataset has {} classes but the model only {}",
                data.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Flat model parameters, the unit exchanged between server and clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            local_epochs: 5,
            batch_size: 10,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Creates the initial global model.
///
/// Logistic weights start at zero. MLP weights are drawn uniformly from
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` where `fan_in` counts the bias input,
/// using a generator seeded only by `spec.init_seed`.
pub fn init_model(spec: &ModelSpec) -> Result<ParamVector> {
    spec.validate()?;
    match spec.kind {
        ModelKind::Logistic => Ok(ParamVector::zeros(spec.param_count())),
        ModelKind::Mlp => {
            let mut rng = seed::rng(spec.init_seed);
            let mut values = Vec::with_capacity(spec.param_count());
            for (fan_in, count) in [
                (spec.input_dim + 1, (spec.input_dim + 1) * spec.hidden_dim),
                (spec.hidden_dim + 1, (spec.hidden_dim + 1) * spec.num_classes),
            ] {
                let bound = 1.0 / (fan_in as f64).sqrt();
                values.extend((0..count).map(|_| rng.random_range(-bound..=bound)));
            }
            Ok(ParamVector(values))
        }
    }
}

/// Runs `local_epochs` passes of mini-batch SGD over the shard and returns
/// the updated parameters. The sample order is reshuffled every epoch from a
/// generator seeded with `rng_seed`; the final batch of an epoch may be short.
pub fn local_train(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
    shard: &DataShard,
    hyper: &Hyperparams,
    rng_seed: u64,
) -> Result<ParamVector> {
    spec.validate()?;
    hyper.validate()?;
    spec.check_params(params)?;
    spec.check_data(data)?;
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    if let Some(&bad) = shard.indices().iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!(
            "shard index {bad} out of range for {} samples",
            data.len()
        )));
    }

    let mut weights = params.clone();
    if hyper.local_epochs == 0 {
        return Ok(weights);
    }

    let mut rng = seed::rng(rng_seed);
    let mut order = shard.indices().to_vec();
    let mut work = Workspace::new(spec);
    for _ in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            work.reset();
            for &i in batch {
                let (x, y) = data.sample(i);
                work.accumulate(spec, weights.as_slice(), x, y);
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (w, g) in weights.0.iter_mut().zip(&work.grad) {
                *w -= step * g;
            }
        }
    }
    Ok(weights)
}

/// Mean cross-entropy and top-1 accuracy over every sample of `data`.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<Evaluation> {
    spec.validate()?;
    spec.check_params(params)?;
    spec.check_data(data)?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut work = Workspace::new(spec);
    let mut mean_loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        let loss = work.forward(spec, params.as_slice(), x, y);
        // Running mean keeps a constant per-sample loss exact.
        mean_loss += (loss - mean_loss) / (i + 1) as f64;
        if argmax(&work.probs) == y {
            correct += 1;
        }
    }
    Ok(Evaluation {
        loss: mean_loss,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Mean loss and its gradient over the given samples.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    spec.check_params(params)?;
    spec.check_data(data)?;
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut work = Workspace::new(spec);
    let mut total = 0.0;
    for &i in indices {
        let (x, y) = data.sample(i);
        total += work.accumulate(spec, params.as_slice(), x, y);
    }
    let n = indices.len() as f64;
    work.grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, work.grad))
}

/// Mean loss over the given samples.
pub fn batch_loss(spec: &ModelSpec, params: &ParamVector, data: &Dataset, indices: &[usize]) -> Result<f64> {
    spec.validate()?;
    spec.check_params(params)?;
    spec.check_data(data)?;
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut work = Workspace::new(spec);
    let total: f64 = indices
        .iter()
        .map(|&i| {
            let (x, y) = data.sample(i);
            work.forward(spec, params.as_slice(), x, y)
        })
        .sum();
    Ok(total / indices.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Scratch buffers for forward and backward passes.
struct Workspace {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    delta_hidden: Vec<f64>,
    grad: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        Workspace {
            hidden: vec![0.0; spec.hidden_dim],
            probs: vec![0.0; spec.num_classes],
            delta_hidden: vec![0.0; spec.hidden_dim],
            grad: vec![0.0; spec.param_count()],
        }
    }

    fn reset(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Fills `probs` with the softmax output and returns the cross-entropy.
    fn forward(&mut self, spec: &ModelSpec, w: &[f64], x: &[f32], y: usize) -> f64 {
        match spec.kind {
            ModelKind::Logistic => dense(w, x, &mut self.probs),
            ModelKind::Mlp => {
                let split = (spec.input_dim + 1) * spec.hidden_dim;
                dense(&w[..split], x, &mut self.hidden);
                self.hidden.iter_mut().for_each(|h| *h = h.tanh());
                dense(&w[split..], &self.hidden, &mut self.probs);
            }
        }
        softmax_cross_entropy(&mut self.probs, y)
    }

    /// Adds the per-sample gradient to `grad` and returns the sample loss.
    fn accumulate(&mut self, spec: &ModelSpec, w: &[f64], x: &[f32], y: usize) -> f64 {
        let loss = self.forward(spec, w, x, y);
        // probs becomes dL/dlogits.
        self.probs[y] -= 1.0;
        match spec.kind {
            ModelKind::Logistic => outer_add(&mut self.grad, &self.probs, x),
            ModelKind::Mlp => {
                let split = (spec.input_dim + 1) * spec.hidden_dim;
                let (grad_in, grad_out) = self.grad.split_at_mut(split);
                outer_add(grad_out, &self.probs, &self.hidden);

                let out_w = &w[split..];
                let stride = spec.hidden_dim + 1;
                for (j, d) in self.delta_hidden.iter_mut().enumerate() {
                    let back: f64 = self
                        .probs
                        .iter()
                        .enumerate()
                        .map(|(k, &dk)| dk * out_w[k * stride + j])
                        .sum();
                    let h = self.hidden[j];
                    *d = back * (1.0 - h * h);
                }
                outer_add(grad_in, &self.delta_hidden, x);
            }
        }
        loss
    }
}

trait Feature: Copy {
    fn value(self) -> f64;
}

impl Feature for f32 {
    #[inline]
    fn value(self) -> f64 {
        self as f64
    }
}

impl Feature for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

/// `out = W [x; 1]` for a row-major `out.len() × (x.len() + 1)` matrix.
fn dense<T: Feature>(w: &[f64], x: &[T], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * stride..(k + 1) * stride];
        let mut acc = row[x.len()];
        for (wj, &xj) in row.iter().zip(x) {
            acc += wj * xj.value();
        }
        *o = acc;
    }
}

/// `grad += delta ⊗ [x; 1]`.
fn outer_add<T: Feature>(grad: &mut [f64], delta: &[f64], x: &[T]) {
    let stride = x.len() + 1;
    for (k, &dk) in delta.iter().enumerate() {
        if dk == 0.0 {
            continue;
        }
        let row = &mut grad[k * stride..(k + 1) * stride];
        for (g, &xj) in row.iter_mut().zip(x) {
            *g += dk * xj.value();
        }
        row[x.len()] += dk;
    }
}

/// Converts logits in place to probabilities; returns `-ln p[y]`.
fn softmax_cross_entropy(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target = logits[y] - max;
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|p| *p /= sum);
    sum.ln() - target
}
