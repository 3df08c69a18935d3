//! Gaussian naive Bayes with per-class population variances.

use serde::{Deserialize, Serialize};

use super::linalg::{column_moments, sigmoid};
use super::{GnbParams, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    /// Index 0 is the negative class.
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    /// Smoothed variances.
    pub variances: [Vec<f64>; 2],
    pub epsilon: f64,
}

impl GnbModel {
    /// Joint log-likelihood `ln P(c) + ln p(x | c)`.
    pub fn joint_log_likelihood(&self, x: &[f64], class: usize) -> f64 {
        let mut ll = self.priors[class].ln();
        for ((&xi, &m), &v) in x.iter().zip(&self.means[class]).zip(&self.variances[class]) {
            let d = xi - m;
            ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v);
        }
        ll
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.joint_log_likelihood(x, 1) - self.joint_log_likelihood(x, 0))
    }
}

pub(crate) fn fit(data: &TrainingSet, params: &GnbParams) -> GnbModel {
    let d = data.dim();
    let x = data.features();
    let y = data.labels();
    let (_, overall_var, _) = column_moments(x.row_iter(), d);
    let max_var = overall_var.iter().cloned().fold(0.0, f64::max);
    // all-constant features: smooth relative to unit variance instead
    let epsilon = params.var_smoothing * if max_var > 0.0 { max_var } else { 1.0 };
    let epsilon = if epsilon > 0.0 { epsilon } else { f64::MIN_POSITIVE };

    let class_stats = |class: bool| {
        let (mean, var, n) = column_moments(
            x.row_iter().zip(y).filter(|(_, &l)| l == class).map(|(r, _)| r),
            d,
        );
        (mean, var.into_iter().map(|v| v + epsilon).collect::<Vec<_>>(), n)
    };
    let (m0, v0, n0) = class_stats(false);
    let (m1, v1, n1) = class_stats(true);
    let n = (n0 + n1) as f64;
    GnbModel {
        priors: [n0 as f64 / n, n1 as f64 / n],
        means: [m0, m1],
        variances: [v0, v1],
        epsilon,
    }
}
