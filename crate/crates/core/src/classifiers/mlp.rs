//! One-hidden-layer perceptron: ReLU hidden units, logistic output unit,
//! mean cross-entropy loss, Adam updates on shuffled mini-batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, logit_cross_entropy, sigmoid};
use super::{ClassifierError, MlpParams, Result, TrainingSet, TrainingSummary};

/// Parameters in one flat buffer laid out as
/// `[w1 (hidden x input, row-major) | b1 (hidden) | w2 (hidden) | b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Network {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        hidden * input + 2 * hidden + 1
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; Self::param_count(input, hidden)],
        }
    }

    /// Uniform weights and biases in `±sqrt(6 / (fan_in + fan_out))` per layer.
    pub fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let (first, second) = net.params.split_at_mut(hidden * input + hidden);
        for p in first {
            *p = rng.random_range(-a1..a1);
        }
        for p in second {
            *p = rng.random_range(-a2..a2);
        }
        net
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (h, d) = (self.hidden, self.input);
        let (w1, rest) = self.params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        (w1, b1, w2, rest[0])
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split();
        let mut z = b2;
        for (k, (row, &b)) in w1.chunks_exact(self.input).zip(b1).enumerate() {
            let a = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if a > 0.0 {
                z += w2[k] * a;
            }
        }
        z
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean (optionally sample-weighted) cross-entropy over the batch and its
    /// gradient in the flat parameter layout.
    pub fn forward_backward(
        &self,
        batch: &[&[f64]],
        labels: &[bool],
        sample_weights: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(ClassifierError::ShapeMismatch("empty batch".into()));
        }
        if labels.len() != batch.len() || sample_weights.is_some_and(|w| w.len() != batch.len()) {
            return Err(ClassifierError::ShapeMismatch(format!(
                "{} rows, {} labels",
                batch.len(),
                labels.len()
            )));
        }
        if self.params.len() != Self::param_count(self.input, self.hidden) {
            return Err(ClassifierError::ShapeMismatch("parameter buffer length".into()));
        }
        if let Some(row) = batch.iter().find(|r| r.len() != self.input) {
            return Err(ClassifierError::ShapeMismatch(format!(
                "row of width {} for a {}-input network",
                row.len(),
                self.input
            )));
        }

        let (h, d) = (self.hidden, self.input);
        let (w1, b1, w2, b2) = self.split();
        let m = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut act = vec![0.0; h];
        let mut loss = 0.0;
        for (i, (&x, &y)) in batch.iter().zip(labels).enumerate() {
            let s = sample_weights.map_or(1.0, |w| w[i]);
            let mut z = b2;
            for (k, row) in w1.chunks_exact(d).enumerate() {
                let a = b1[k] + dot(row, x);
                act[k] = a.max(0.0);
                z += w2[k] * act[k];
            }
            loss += s * logit_cross_entropy(z, y);
            let dz = s * (sigmoid(z) - if y { 1.0 } else { 0.0 }) / m;

            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(h);
            gb2[0] += dz;
            for k in 0..h {
                if act[k] > 0.0 {
                    gw2[k] += dz * act[k];
                    let da = dz * w2[k];
                    gb1[k] += da;
                    for (g, v) in gw1[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += da * v;
                    }
                }
            }
        }
        Ok((loss / m, grad))
    }
}

/// Spec-facing wrapper for [`Network::forward_backward`] without sample weights.
pub fn mlp_forward_backward(network: &Network, batch: &[&[f64]], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    network.forward_backward(batch, labels, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl MlpModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        self.network.probability(x)
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(params: &MlpParams, len: usize) -> Self {
        Self {
            lr: params.learning_rate,
            beta1: params.beta1,
            beta2: params.beta2,
            eps: params.epsilon,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + self.eps);
        }
    }
}

pub(crate) fn fit(
    data: &TrainingSet,
    params: &MlpParams,
    sample_weights: Option<&[f64]>,
    seed: u64,
) -> Result<(MlpModel, TrainingSummary)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::glorot(data.dim(), params.hidden, &mut rng);
    let mut adam = Adam::new(params, net.params.len());
    let x = data.features();
    let y = data.labels();
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut converged = false;

    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| x.row(i)).collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| y[i]).collect();
            let weights: Option<Vec<f64>> = sample_weights.map(|w| chunk.iter().map(|&i| w[i]).collect());
            let (loss, grad) = net.forward_backward(&rows, &labels, weights.as_deref())?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut net.params, &grad);
        }
        let epoch_loss = epoch_loss / n as f64;
        curve.push(epoch_loss);
        if epoch_loss > best - params.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= params.n_iter_no_change {
            converged = true;
            break;
        }
    }

    let summary = TrainingSummary {
        objective: curve.last().copied(),
        objective_trace: curve.clone(),
        iterations: curve.len(),
        converged,
    };
    Ok((
        MlpModel {
            network: net,
            loss_curve: curve,
        },
        summary,
    ))
}
