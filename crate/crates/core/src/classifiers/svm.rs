//! C-SVM trained by SMO with second-order working-set selection.
//!
//! Dual: minimize `f(a) = 1/2 a^T Q a - sum(a)` subject to `0 <= a_i <= C_i`
//! and `y^T a = 0`, where `Q_ij = y_i y_j K(x_i, x_j)`. The recorded
//! objective is the dual value `-f(a)`, which never decreases.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{column_moments, dot, sq_dist, Matrix};
use super::{ClassWeight, ClassifierError, KernelChoice, Result, SvmParams, TrainingSet, TrainingSummary};

const TAU: f64 = 1e-12;
const PARALLEL_ROW_MIN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
            Kernel::Linear => dot(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support: Matrix,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .row_iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }
}

/// Signed margin of `x`; positive means label 1.
pub fn svm_decision(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.support.cols() {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.support.cols(),
            got: x.len(),
        });
    }
    Ok(model.decision(x))
}

/// `1 / (dim * mean per-feature variance)`, or 1 when every feature is constant.
pub(crate) fn scale_gamma(x: &Matrix) -> f64 {
    let (_, var, _) = column_moments(x.row_iter(), x.cols());
    let mean_var = var.iter().sum::<f64>() / var.len() as f64;
    if mean_var > 0.0 {
        1.0 / (x.cols() as f64 * mean_var)
    } else {
        1.0
    }
}

struct KernelRows<'a> {
    x: &'a Matrix,
    kernel: Kernel,
    cap: usize,
    rows: HashMap<usize, Arc<Vec<f64>>>,
    order: VecDeque<usize>,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Matrix, kernel: Kernel, cap: usize) -> Self {
        Self {
            x,
            kernel,
            cap: cap.max(2),
            rows: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = self.rows.get(&i) {
            return Arc::clone(r);
        }
        let xi = self.x.row(i);
        let kernel = self.kernel;
        let n = self.x.rows();
        let values: Vec<f64> = if n >= PARALLEL_ROW_MIN {
            (0..n).into_par_iter().map(|j| kernel.eval(xi, self.x.row(j))).collect()
        } else {
            (0..n).map(|j| kernel.eval(xi, self.x.row(j))).collect()
        };
        let row = Arc::new(values);
        if self.order.len() == self.cap {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.order.push_back(i);
        self.rows.insert(i, Arc::clone(&row));
        row
    }
}

pub(crate) fn fit(
    data: &TrainingSet,
    params: &SvmParams,
    class_weight: ClassWeight,
) -> (SvmModel, TrainingSummary) {
    let x = data.features();
    let n = data.len();
    let kernel = match params.kernel {
        KernelChoice::Rbf => Kernel::Rbf {
            gamma: params.gamma.unwrap_or_else(|| scale_gamma(x)),
        },
        KernelChoice::Linear => Kernel::Linear,
    };
    let y: Vec<f64> = data.labels().iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let c: Vec<f64> = match data.sample_weights(class_weight) {
        Some(w) => w.iter().map(|wi| params.c * wi).collect(),
        None => vec![params.c; n],
    };
    let diag: Vec<f64> = x.row_iter().map(|r| kernel.eval(r, r)).collect();
    let mut rows = KernelRows::new(x, kernel, params.cache_rows);

    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let dual = |alpha: &[f64], grad: &[f64]| -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    let mut trace = vec![0.0];
    let mut updates = 0usize;
    let mut converged = false;

    let is_upper = |a: f64, ci: f64| a >= ci;
    let is_lower = |a: f64| a <= 0.0;

    while updates < params.max_updates {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !is_upper(alpha[t], c[t]) } else { !is_lower(alpha[t]) };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let ki = rows.row(i);

        // j: maximal objective decrease among I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t], c[t]) };
            if !in_low {
                continue;
            }
            let yg = y[t] * grad[t];
            gmax2 = gmax2.max(yg);
            let b = gmax + yg;
            if b > 0.0 {
                let a = diag[i] + diag[t] - 2.0 * ki[t];
                let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let (true, Some(j)) = (gmax + gmax2 >= params.tol, j_sel) else {
            converged = true;
            break;
        };
        let kj = rows.row(j);

        let (ci, cj) = (c[i], c[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        updates += 1;
        if updates.is_multiple_of(n) {
            trace.push(dual(&alpha, &grad));
        }
    }
    let objective = dual(&alpha, &grad);
    if trace.last() != Some(&objective) {
        trace.push(objective);
    }

    let bias = -rho(&alpha, &grad, &y, &c);
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.extend_from_slice(x.row(t));
            coef.push(alpha[t] * y[t]);
        }
    }
    let support = Matrix::new(coef.len(), x.cols(), support).expect("rows are copied whole");
    (
        SvmModel {
            kernel,
            support,
            coef,
            bias,
        },
        TrainingSummary {
            objective: Some(objective),
            objective_trace: trace,
            iterations: updates,
            converged,
        },
    )
}

fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    }
}
