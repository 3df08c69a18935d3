//! L2-regularized logistic regression fitted with L-BFGS.
//!
//! Objective: mean cross-entropy + `l2 / (2n) * ||w||^2` with `l2 = 1 / C`.
//! The bias is not penalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, logit_cross_entropy, sigmoid, Matrix};
use super::{LogRegParams, TrainingSet, TrainingSummary};

const HISTORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const ROW_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: f64,
}

/// Objective value and gradient at `(weights, bias)` over the rows of `x`.
///
/// # Panics
///
/// If `x` has no rows, or the shapes of `x`, `y` and `weights` disagree.
pub fn logreg_loss_grad(weights: &[f64], bias: f64, x: &Matrix, y: &[bool], l2: f64) -> LossGrad {
    assert!(x.rows() > 0 && x.rows() == y.len() && x.cols() == weights.len(), "shape mismatch");
    loss_grad(weights, bias, x, y, l2, None)
}

pub(crate) fn loss_grad(
    weights: &[f64],
    bias: f64,
    x: &Matrix,
    y: &[bool],
    l2: f64,
    sample_weights: Option<&[f64]>,
) -> LossGrad {
    let n = x.rows();
    let d = x.cols();
    // fixed chunking keeps the summation order independent of thread count
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let partials: Vec<(f64, Vec<f64>, f64)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ROW_CHUNK).min(n);
            let mut loss = 0.0;
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for i in start..end {
                let row = x.row(i);
                let s = sample_weights.map_or(1.0, |w| w[i]);
                let z = dot(weights, row) + bias;
                loss += s * logit_cross_entropy(z, y[i]);
                let r = s * (sigmoid(z) - if y[i] { 1.0 } else { 0.0 });
                gb += r;
                for (g, &v) in gw.iter_mut().zip(row) {
                    *g += r * v;
                }
            }
            (loss, gw, gb)
        })
        .collect();

    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad_weights = vec![0.0; d];
    let mut grad_bias = 0.0;
    for (l, gw, gb) in partials {
        loss += l;
        grad_bias += gb;
        for (a, b) in grad_weights.iter_mut().zip(gw) {
            *a += b;
        }
    }
    loss /= nf;
    grad_bias /= nf;
    for (g, &w) in grad_weights.iter_mut().zip(weights) {
        *g = (*g + l2 * w) / nf;
    }
    loss += 0.5 * l2 * dot(weights, weights) / nf;
    LossGrad {
        loss,
        grad_weights,
        grad_bias,
    }
}

pub(crate) fn fit(
    data: &TrainingSet,
    params: &LogRegParams,
    sample_weights: Option<&[f64]>,
) -> (LogRegModel, TrainingSummary) {
    let d = data.dim();
    let l2 = 1.0 / params.c;
    let eval = |theta: &[f64]| {
        let lg = loss_grad(&theta[..d], theta[d], data.features(), data.labels(), l2, sample_weights);
        let mut g = lg.grad_weights;
        g.push(lg.grad_bias);
        (lg.loss, g)
    };

    let mut theta = vec![0.0; d + 1];
    let (mut f, mut g) = eval(&theta);
    let mut trace = vec![f];
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(HISTORY);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        if max_abs(&g) <= params.tol {
            converged = true;
            break;
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, p)| t + step * p).collect();
            let (fc, gc) = eval(&cand);
            if fc <= f + ARMIJO_C1 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no decrease is representable along the search direction
            converged = max_abs(&g) <= params.tol * 10.0;
            break;
        };

        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if history.len() == HISTORY {
                history.remove(0);
            }
            history.push((s, yv, 1.0 / sy));
        }
        let f_prev = f;
        theta = cand;
        f = fc;
        g = gc;
        trace.push(f);
        iterations += 1;
        if (f_prev - f) <= 64.0 * f64::EPSILON * f_prev.abs().max(f.abs()).max(1.0) {
            converged = true;
            break;
        }
    }

    let bias = theta[d];
    theta.truncate(d);
    (
        LogRegModel {
            weights: theta,
            bias,
        },
        TrainingSummary {
            objective: Some(f),
            objective_trace: trace,
            iterations,
            converged,
        },
    )
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS two-loop recursion: returns `-H g`.
fn two_loop(g: &[f64], history: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; history.len()];
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((s, y, _)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dimension;
    use proptest::prelude::*;

    fn small_set() -> TrainingSet {
        TrainingSet::from_rows(
            Dimension::Pc,
            &[
                vec![0.2, -1.0, 0.5],
                vec![1.5, 0.3, -0.2],
                vec![-0.7, 0.8, 1.1],
                vec![0.1, 0.1, -1.3],
                vec![2.0, -0.4, 0.0],
            ],
            vec![false, true, false, true, true],
        )
        .unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gradient_matches_central_differences(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 10), 2..16),
            w in proptest::collection::vec(-1.0f64..1.0, 10),
            b in -1.0f64..1.0,
            l2 in 0.0f64..2.0,
        ) {
            let y: Vec<bool> = (0..rows.len()).map(|i| i % 2 == 0).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let lg = logreg_loss_grad(&w, b, &x, &y, l2);
            let h = 1e-5;
            let mut worst = 0.0f64;
            for j in 0..10 {
                let mut wp = w.clone();
                wp[j] += h;
                let mut wm = w.clone();
                wm[j] -= h;
                let fd = (logreg_loss_grad(&wp, b, &x, &y, l2).loss
                    - logreg_loss_grad(&wm, b, &x, &y, l2).loss) / (2.0 * h);
                worst = worst.max(rel_err(fd, lg.grad_weights[j]));
            }
            let fd = (logreg_loss_grad(&w, b + h, &x, &y, l2).loss
                - logreg_loss_grad(&w, b - h, &x, &y, l2).loss) / (2.0 * h);
            worst = worst.max(rel_err(fd, lg.grad_bias));
            prop_assert!(worst < 1e-4, "max relative error {}", worst);
        }
    }

    #[test]
    fn zero_weights_balanced_loss_is_ln2() {
        let data = small_set();
        let lg = logreg_loss_grad(&[0.0; 3], 0.0, data.features(), data.labels(), 1.0);
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-12);
        let m = LogRegModel { weights: vec![0.0; 3], bias: 0.0 };
        assert_eq!(m.probability(&[5.0, -3.0, 1.0]), 0.5);
    }

    #[test]
    fn single_example_gradient_is_closed_form() {
        let x = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let (w, b) = ([0.3, 0.1], -0.2);
        let lg = logreg_loss_grad(&w, b, &x, &[true], 0.0);
        let r = sigmoid(0.3 * 0.5 - 0.1 * 2.0 - 0.2) - 1.0;
        assert_eq!(lg.grad_weights, vec![r * 0.5, r * -2.0]);
        assert_eq!(lg.grad_bias, r);
    }

    #[test]
    fn symmetric_data_has_zero_bias() {
        let pts = [vec![0.4, 1.2], vec![-0.9, 0.3], vec![1.5, -0.2]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for p in &pts {
            rows.push(p.clone());
            labels.push(true);
            rows.push(p.iter().map(|v| -v).collect());
            labels.push(false);
        }
        let data = TrainingSet::from_rows(Dimension::Pc, &rows, labels).unwrap();
        let (m, _) = fit(&data, &LogRegParams::default(), None);
        assert!(m.bias.abs() < 1e-3);
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let (_, summary) = fit(&small_set(), &LogRegParams::default(), None);
        assert!(summary.converged);
        for pair in summary.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0], "{pair:?}");
        }
    }

    #[test]
    fn symmetric_pair_matches_scalar_optimum() {
        // x = -1 (neg), x = +1 (pos), n = 2, C = 1: the bias is 0 by symmetry and
        // the weight solves w = 2 * sigmoid(-w). Bisection gives the reference.
        let data =
            TrainingSet::from_rows(Dimension::Pc, &[vec![-1.0], vec![1.0]], vec![false, true]).unwrap();
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - 2.0 * sigmoid(-mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (model, summary) = fit(&data, &LogRegParams::default(), None);
        assert!(summary.converged);
        assert!((model.weights[0] - lo).abs() < 1e-6, "{} vs {lo}", model.weights[0]);
        assert!(model.bias.abs() < 1e-6);
    }

    #[test]
    fn unregularized_bias_absorbs_class_prior() {
        // constant feature 0: only the bias can move, ending at the log-odds
        let data = TrainingSet::from_rows(
            Dimension::Ae,
            &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]],
            vec![true, false, false, false],
        )
        .unwrap();
        let (model, _) = fit(&data, &LogRegParams::default(), None);
        assert!((model.bias - (1.0f64 / 3.0).ln()).abs() < 1e-5);
    }
}
