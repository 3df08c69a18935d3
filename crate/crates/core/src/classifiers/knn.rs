use serde::{Deserialize, Serialize};

use super::linalg::{sq_dist, Matrix};
use super::{KnnParams, TrainingSet};

/// Stores the training rows verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub features: Matrix,
    pub labels: Vec<bool>,
}

impl KnnModel {
    /// Indices of the `k` nearest training rows under squared Euclidean
    /// distance; ties go to the lower index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let mut dists: Vec<(f64, usize)> = self
            .features
            .row_iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, x), i))
            .collect();
        let k = self.k.min(dists.len());
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, by_dist);
            dists.truncate(k);
        }
        dists.sort_by(by_dist);
        dists.into_iter().map(|(_, i)| i).collect()
    }

    pub fn positive_fraction(&self, x: &[f64]) -> f64 {
        let nn = self.neighbours(x);
        let pos = nn.iter().filter(|&&i| self.labels[i]).count();
        pos as f64 / nn.len() as f64
    }
}

pub(crate) fn fit(data: &TrainingSet, params: &KnnParams) -> KnnModel {
    KnnModel {
        k: params.k.min(data.len()),
        features: data.features().clone(),
        labels: data.labels().to_vec(),
    }
}
