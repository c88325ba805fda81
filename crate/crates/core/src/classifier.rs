//! Feed-forward softmax classifier with analytic gradients.
//!
//! Hidden layers use `tanh`; the output layer is linear and produces logits.
//! All parameters live in one flat buffer so that aggregation and distance
//! computations are plain vector arithmetic.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Momentum of the local SGD optimizer.
pub const SGD_MOMENTUM: f64 = 0.5;

/// MLP weights and biases.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weight
/// matrix is stored row-major (`outputs x inputs`) followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters for layer widths `sizes` (input first, classes last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig {
                field: "model_hidden_sizes",
                reason: format!("layer widths {sizes:?} must be positive with input and output"),
            });
        }
        let len = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            values: vec![0.0; len],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params.values[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(params)
    }

    pub fn from_values(sizes: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        if values.len() != params.values.len() {
            return Err(Error::DimensionMismatch {
                expected: params.values.len(),
                actual: values.len(),
            });
        }
        params.values = values;
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Flattened parameters.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.sizes == other.sizes
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = self.layer_span(l);
        let w_end = start + n_in * n_out;
        (&self.values[start..w_end], &self.values[w_end..w_end + n_out])
    }

    fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let start = self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (start, self.sizes[l], self.sizes[l + 1])
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let input = &acts[l];
            let mut out: Vec<f64> = b
                .iter()
                .zip(w.chunks_exact(input.len()))
                .map(|(bias, row)| bias + dot(row, input))
                .collect();
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Class scores before the softmax.
pub fn forward_logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    Ok(params.forward_trace(x).pop().unwrap())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(softmax(logits))` via log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&forward_logits(params, x)?))
}

/// `-log p(y | x)` computed through the log-softmax.
pub fn cross_entropy(params: &ModelParams, x: &[f64], y: usize) -> Result<f64> {
    let classes = params.num_classes();
    if y >= classes {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_classes: classes,
        });
    }
    Ok(-log_softmax(&forward_logits(params, x)?)[y])
}

/// A MixUp-interpolated input with its soft target.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MixedSample {
    /// Unmixed sample with a one-hot target.
    pub fn one_hot(x: &[f64], y: usize, num_classes: usize) -> Self {
        let mut target = vec![0.0; num_classes];
        target[y] = 1.0;
        Self {
            x: x.to_vec(),
            y: target,
        }
    }
}

/// `lambda * (xi, onehot(yi)) + (1 - lambda) * (xj, onehot(yj))`.
pub fn mixup_pair(
    xi: &[f64],
    yi: usize,
    xj: &[f64],
    yj: usize,
    lambda: f64,
    num_classes: usize,
) -> Result<MixedSample> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch {
            expected: xi.len(),
            actual: xj.len(),
        });
    }
    for label in [yi, yj] {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
    }
    let x = xi
        .iter()
        .zip(xj)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let mut y = vec![0.0; num_classes];
    y[yi] += lambda;
    y[yj] += 1.0 - lambda;
    Ok(MixedSample { x, y })
}

/// Summed soft-target cross-entropy over the batch plus `eta` times
/// `KL(uniform || mean batch prediction)`, with its exact gradient.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[MixedSample],
    eta: f64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyTrainingData);
    }
    let classes = params.num_classes();
    let batch_len = batch.len() as f64;
    let mut traces = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for sample in batch {
        params.check_input(&sample.x)?;
        if sample.y.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                actual: sample.y.len(),
            });
        }
        let trace = params.forward_trace(&sample.x);
        let logp = log_softmax(trace.last().unwrap());
        loss -= dot(&sample.y, &logp);
        probs.push(logp.iter().map(|v| v.exp()).collect::<Vec<f64>>());
        traces.push(trace);
    }

    // mean prediction and the coefficient d(reg)/d(q_c) = -1 / (C q_c)
    let mut mean = vec![0.0; classes];
    for p in &probs {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / batch_len;
        }
    }
    let prior = 1.0 / classes as f64;
    if eta != 0.0 {
        let reg: f64 = mean.iter().map(|q| prior * (prior / q).ln()).sum();
        loss += eta * reg;
    }
    let reg_coef: Vec<f64> = mean.iter().map(|q| -prior / q).collect();

    let mut grad = ModelParams::zeros(&params.sizes)?;
    for ((sample, trace), p) in batch.iter().zip(&traces).zip(&probs) {
        let target_mass: f64 = sample.y.iter().sum();
        let mut delta: Vec<f64> = p
            .iter()
            .zip(&sample.y)
            .map(|(pc, yc)| pc * target_mass - yc)
            .collect();
        if eta != 0.0 {
            // d reg / d z_j = (1/B) * p_j * (a_j - sum_c a_c p_c), a = reg_coef
            let weighted: f64 = reg_coef.iter().zip(p).map(|(a, pc)| a * pc).sum();
            for ((d, pj), aj) in delta.iter_mut().zip(p).zip(&reg_coef) {
                *d += eta * pj * (aj - weighted) / batch_len;
            }
        }
        backprop(params, trace, delta, &mut grad);
    }
    Ok((loss, grad))
}

/// Accumulate parameter gradients given the gradient at the logits.
fn backprop(params: &ModelParams, trace: &[Vec<f64>], mut delta: Vec<f64>, grad: &mut ModelParams) {
    for l in (0..params.num_layers()).rev() {
        let (start, n_in, n_out) = params.layer_span(l);
        let input = &trace[l];
        let g = &mut grad.values[start..start + n_in * n_out + n_out];
        let (gw, gb) = g.split_at_mut(n_in * n_out);
        for (o, d) in delta.iter().enumerate() {
            gb[o] += d;
            for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                *gwi += d * xi;
            }
        }
        if l == 0 {
            break;
        }
        let (w, _) = params.layer(l);
        delta = (0..n_in)
            .map(|i| {
                let upstream: f64 = delta.iter().enumerate().map(|(o, d)| d * w[o * n_in + i]).sum();
                upstream * (1.0 - input[i] * input[i])
            })
            .collect();
    }
}

/// One labeled training example borrowed from a client dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: usize,
}

/// Hyper-parameters of local optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mixup_alpha: f64,
    pub reg_weight: f64,
}

/// SGD with momentum over MixUp batches; keeps its velocity across epochs.
#[derive(Clone, Debug)]
pub struct LocalOptimizer {
    params: ModelParams,
    velocity: Vec<f64>,
    settings: TrainSettings,
    mixup: Option<Beta<f64>>,
}

impl LocalOptimizer {
    pub fn new(params: ModelParams, settings: TrainSettings) -> Result<Self> {
        if settings.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "batch_size",
                reason: "must be positive".into(),
            });
        }
        // alpha <= 0 disables mixing (lambda = 1)
        let mixup = if settings.mixup_alpha > 0.0 {
            Some(
                Beta::new(settings.mixup_alpha, settings.mixup_alpha).map_err(|e| {
                    Error::InvalidConfig {
                        field: "mixup_alpha",
                        reason: e.to_string(),
                    }
                })?,
            )
        } else {
            None
        };
        let velocity = vec![0.0; params.values.len()];
        Ok(Self {
            params,
            velocity,
            settings,
            mixup,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// One pass over `data`: shuffle, batch, mix each batch with a shuffled
    /// copy of itself, step. Returns the summed batch loss.
    pub fn run_epoch(&mut self, data: &[Sample<'_>], rng: &mut RngStream) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingData);
        }
        let classes = self.params.num_classes();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.settings.batch_size) {
            let lambda = match &self.mixup {
                Some(beta) => beta.sample(rng),
                None => 1.0,
            };
            let mut partners = chunk.to_vec();
            partners.shuffle(rng);
            let batch = chunk
                .iter()
                .zip(&partners)
                .map(|(&i, &j)| {
                    mixup_pair(data[i].x, data[i].y, data[j].x, data[j].y, lambda, classes)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grad) = batch_loss(&self.params, &batch, self.settings.reg_weight)?;
            total += loss;
            let lr = self.settings.learning_rate;
            for ((p, v), g) in self
                .params
                .values
                .iter_mut()
                .zip(&mut self.velocity)
                .zip(&grad.values)
            {
                *v = SGD_MOMENTUM * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(total)
    }
}

/// `local_epochs` epochs of MixUp SGD on a fixed data set.
pub fn local_train(
    params: &ModelParams,
    data: &[Sample<'_>],
    settings: TrainSettings,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingData);
    }
    let mut opt = LocalOptimizer::new(params.clone(), settings)?;
    for _ in 0..settings.local_epochs {
        opt.run_epoch(data, rng)?;
    }
    Ok(opt.into_params())
}

/// Cross-entropy of every sample under its given label, in dataset order.
pub fn per_sample_losses(params: &ModelParams, samples: &[Sample<'_>]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| cross_entropy(params, s.x, s.y))
        .collect()
}
