//! Five binary learners over paragraph vectors, trained once per dimension.
//!
//! Every learner is deterministic given `(data order, hyper, seed)`. The only
//! stochastic one, the MLP, draws from a ChaCha8 generator seeded with the
//! 64-bit model seed.
//!
//! Scores and thresholds:
//!
//! | kind   | score                     | label is 1 when |
//! |--------|---------------------------|-----------------|
//! | logreg | P(y = 1)                  | score > 0.5     |
//! | gnb    | posterior P(y = 1)        | score > 0.5     |
//! | svm    | signed margin             | score > 0       |
//! | mlp    | P(y = 1)                  | score > 0.5     |
//! | knn    | positive fraction of k NN | score > 0.5     |
//!
//! A score exactly on the threshold is a negative.

mod bundle;
mod gnb;
mod knn;
mod linalg;
mod logreg;
mod mlp;
mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dimension;
use crate::embedding::EmbeddingVector;

pub use bundle::{read_bundle, write_bundle, BundleEntry, ModelBundle, BUNDLE_FORMAT_VERSION};
pub use gnb::GnbModel;
pub use knn::KnnModel;
pub use linalg::{sigmoid, Matrix};
pub use logreg::{logreg_loss_grad, LogRegModel, LossGrad};
pub use mlp::{mlp_forward_backward, MlpModel, Network};
pub use svm::{svm_decision, Kernel, SvmModel};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature matrix contains a non-finite value")]
    NonFiniteFeature,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model is a {actual} model, expected {expected}")]
    WrongKind { expected: LearnerKind, actual: LearnerKind },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("model bundle is missing the {kind} model for {dimension}")]
    IncompleteBundle { dimension: Dimension, kind: LearnerKind },
    #[error("malformed model bundle: {0}")]
    BundleFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Logreg,
    Gnb,
    Svm,
    Mlp,
    Knn,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::Logreg,
        LearnerKind::Gnb,
        LearnerKind::Svm,
        LearnerKind::Mlp,
        LearnerKind::Knn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Logreg => "logreg",
            LearnerKind::Gnb => "gnb",
            LearnerKind::Svm => "svm",
            LearnerKind::Mlp => "mlp",
            LearnerKind::Knn => "knn",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            LearnerKind::Logreg => "Logistic Regression",
            LearnerKind::Gnb => "Gaussian Naive Bayes",
            LearnerKind::Svm => "Support Vector Classifier",
            LearnerKind::Mlp => "MLP",
            LearnerKind::Knn => "K-Nearest Neighbors Classifier",
        }
    }

    pub fn decision_threshold(self) -> f64 {
        match self {
            LearnerKind::Svm => 0.0,
            _ => 0.5,
        }
    }

    /// Maps the score onto `[0, 1]`; margins go through the logistic function.
    pub fn unit_score(self, score: f64) -> f64 {
        match self {
            LearnerKind::Svm => sigmoid(score),
            _ => score,
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown learner {s:?}"))
    }
}

/// Labelled feature rows for one label dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dimension: Dimension,
    ids: Vec<String>,
    features: Matrix,
    labels: Vec<bool>,
}

impl TrainingSet {
    pub fn new(
        dimension: Dimension,
        ids: Vec<String>,
        features: Matrix,
        labels: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != labels.len() || ids.len() != labels.len() {
            return Err(ClassifierError::LengthMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        if labels.len() < 2 {
            return Err(ClassifierError::TooFewSamples(labels.len()));
        }
        if features.cols() == 0 {
            return Err(ClassifierError::ShapeMismatch("zero-width feature rows".into()));
        }
        if !features.as_slice().iter().all(|v| v.is_finite()) {
            return Err(ClassifierError::NonFiniteFeature);
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == labels.len() {
            return Err(ClassifierError::SingleClassTraining);
        }
        Ok(Self {
            dimension,
            ids,
            features,
            labels,
        })
    }

    /// Builds a set from in-memory rows; ids are the row positions.
    pub fn from_rows(dimension: Dimension, rows: &[Vec<f64>], labels: Vec<bool>) -> Result<Self> {
        let features = Matrix::from_rows(rows)?;
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(dimension, ids, features, labels)
    }

    pub fn from_vectors(
        dimension: Dimension,
        rows: &[(&str, &EmbeddingVector, bool)],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.1.dim());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (_, v, _) in rows {
            if v.dim() != dim {
                return Err(ClassifierError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            data.extend(v.values().iter().map(|&x| f64::from(x)));
        }
        let features = Matrix::new(rows.len(), dim, data)?;
        Self::new(
            dimension,
            rows.iter().map(|r| r.0.to_owned()).collect(),
            features,
            rows.iter().map(|r| r.2).collect(),
        )
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// SHA-256 over dimension, ids, labels and the bit patterns of all features.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.dimension.as_str().as_bytes());
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(self.features.row_iter()) {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
            h.update([u8::from(*label)]);
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Per-sample weights implied by the class-weight setting.
    pub(crate) fn sample_weights(&self, class_weight: ClassWeight) -> Option<Vec<f64>> {
        match class_weight {
            ClassWeight::None => None,
            ClassWeight::Balanced => {
                let n = self.len() as f64;
                let pos = self.positives() as f64;
                let neg = n - pos;
                let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
                Some(self.labels.iter().map(|&l| if l { wp } else { wn }).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    /// Weights inversely proportional to class frequency.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegParams {
    /// Inverse regularization strength; the L2 coefficient is `1 / c`.
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnbParams {
    /// Added to every variance, as a fraction of the largest feature variance.
    pub var_smoothing: f64,
}

impl Default for GnbParams {
    fn default() -> Self {
        Self {
            var_smoothing: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelChoice,
    /// RBF width; `None` means `1 / (dim * mean per-feature variance)`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_updates: usize,
    /// Kernel rows kept in memory during training.
    pub cache_rows: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: KernelChoice::Rbf,
            gamma: None,
            tol: 1e-3,
            max_updates: 10_000,
            cache_rows: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub tol: f64,
    pub n_iter_no_change: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            tol: 1e-4,
            n_iter_no_change: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// All learner settings, with out-of-the-box defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub logreg: LogRegParams,
    pub gnb: GnbParams,
    pub svm: SvmParams,
    pub mlp: MlpParams,
    pub knn: KnnParams,
    /// Applies to logreg, svm and mlp.
    pub class_weight: ClassWeight,
}

impl HyperParams {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ClassifierError::InvalidHyper(msg.to_owned()));
        if !(self.logreg.c > 0.0) || !(self.svm.c > 0.0) {
            return bad("C must be positive");
        }
        if self.logreg.max_iter == 0 {
            return bad("logreg.max_iter must be positive");
        }
        if self.gnb.var_smoothing < 0.0 {
            return bad("gnb.var_smoothing must be non-negative");
        }
        if self.svm.gamma.is_some_and(|g| !(g > 0.0)) {
            return bad("svm.gamma must be positive");
        }
        if self.mlp.hidden == 0 || self.mlp.batch_size == 0 || self.mlp.max_epochs == 0 {
            return bad("mlp.hidden, batch_size and max_epochs must be positive");
        }
        if !(self.mlp.learning_rate > 0.0) {
            return bad("mlp.learning_rate must be positive");
        }
        if self.knn.k == 0 {
            return bad("knn.k must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Logreg(LogRegModel),
    Gnb(GnbModel),
    Svm(SvmModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

/// What happened during fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Final objective: regularized mean cross-entropy for logreg, dual
    /// objective (maximized) for svm, last epoch loss for mlp.
    pub objective: Option<f64>,
    /// Objective per iteration (logreg), per epoch of pair updates (svm) or
    /// per epoch (mlp).
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: LearnerKind,
    pub dimension: Dimension,
    pub dim: usize,
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub seed: u64,
    pub summary: TrainingSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: bool,
    pub score: f64,
}

pub fn fit(kind: LearnerKind, data: &TrainingSet, hyper: &HyperParams, seed: u64) -> Result<TrainedModel> {
    hyper.validate()?;
    let weights = data.sample_weights(hyper.class_weight);
    let (params, summary) = match kind {
        LearnerKind::Logreg => {
            let (m, s) = logreg::fit(data, &hyper.logreg, weights.as_deref());
            (ModelParams::Logreg(m), s)
        }
        LearnerKind::Gnb => (ModelParams::Gnb(gnb::fit(data, &hyper.gnb)), TrainingSummary::default()),
        LearnerKind::Svm => {
            let (m, s) = svm::fit(data, &hyper.svm, hyper.class_weight);
            (ModelParams::Svm(m), s)
        }
        LearnerKind::Mlp => {
            let (m, s) = mlp::fit(data, &hyper.mlp, weights.as_deref(), seed)?;
            (ModelParams::Mlp(m), s)
        }
        LearnerKind::Knn => (ModelParams::Knn(knn::fit(data, &hyper.knn)), TrainingSummary::default()),
    };
    Ok(TrainedModel {
        kind,
        dimension: data.dimension(),
        dim: data.dim(),
        params,
        hyper: *hyper,
        seed,
        summary,
    })
}

impl TrainedModel {
    /// Raw score on the kind's own scale (see the module table).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(match &self.params {
            ModelParams::Logreg(m) => m.probability(x),
            ModelParams::Gnb(m) => m.probability(x),
            ModelParams::Svm(m) => m.decision(x),
            ModelParams::Mlp(m) => m.probability(x),
            ModelParams::Knn(m) => m.positive_fraction(x),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let score = self.score(x)?;
        Ok(Prediction {
            label: score > self.kind.decision_threshold(),
            score,
        })
    }

    pub fn predict_vector(&self, x: &EmbeddingVector) -> Result<Prediction> {
        let row: Vec<f64> = x.values().iter().map(|&v| f64::from(v)).collect();
        self.predict(&row)
    }
}

/// Convenience wrapper for [`TrainedModel::predict`].
pub fn predict(model: &TrainedModel, x: &[f64]) -> Result<Prediction> {
    model.predict(x)
}
