//! Count-threshold voting over the five learners, and review shortlists.

mod decisions;

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{ClassifierError, LearnerKind, ModelBundle};
use crate::corpus::Dimension;
use crate::embedding::VectorLookup;

pub use decisions::{read_decisions_jsonl, write_decisions_jsonl, DecisionRecord};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("vote threshold must be between 1 and 5, got {0}")]
    ThresholdOutOfRange(i64),
    #[error("no vector for paragraph {0}")]
    MissingVector(String),
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("decisions file line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

/// One value per learner kind, serialized as an object keyed by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerKind<T> {
    pub logreg: T,
    pub gnb: T,
    pub svm: T,
    pub mlp: T,
    pub knn: T,
}

impl<T> PerKind<T> {
    pub fn from_fn(mut f: impl FnMut(LearnerKind) -> T) -> Self {
        Self {
            logreg: f(LearnerKind::Logreg),
            gnb: f(LearnerKind::Gnb),
            svm: f(LearnerKind::Svm),
            mlp: f(LearnerKind::Mlp),
            knn: f(LearnerKind::Knn),
        }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(LearnerKind) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self {
            logreg: f(LearnerKind::Logreg)?,
            gnb: f(LearnerKind::Gnb)?,
            svm: f(LearnerKind::Svm)?,
            mlp: f(LearnerKind::Mlp)?,
            knn: f(LearnerKind::Knn)?,
        })
    }

    pub fn get(&self, kind: LearnerKind) -> &T {
        match kind {
            LearnerKind::Logreg => &self.logreg,
            LearnerKind::Gnb => &self.gnb,
            LearnerKind::Svm => &self.svm,
            LearnerKind::Mlp => &self.mlp,
            LearnerKind::Knn => &self.knn,
        }
    }

    pub fn get_mut(&mut self, kind: LearnerKind) -> &mut T {
        match kind {
            LearnerKind::Logreg => &mut self.logreg,
            LearnerKind::Gnb => &mut self.gnb,
            LearnerKind::Svm => &mut self.svm,
            LearnerKind::Mlp => &mut self.mlp,
            LearnerKind::Knn => &mut self.knn,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (LearnerKind, &T)> {
        LearnerKind::ALL.into_iter().map(move |k| (k, self.get(k)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(LearnerKind, &T) -> U) -> PerKind<U> {
        PerKind::from_fn(|k| f(k, self.get(k)))
    }
}

/// Minimum number of positive votes for a positive decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Threshold(u8);

impl Threshold {
    pub const MAX: u8 = LearnerKind::ALL.len() as u8;

    pub fn new(value: i64) -> Result<Self> {
        if (1..=i64::from(Self::MAX)).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(EnsembleError::ThresholdOutOfRange(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Threshold> {
        (1..=Self::MAX).map(Threshold)
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(2)
    }
}

impl TryFrom<i64> for Threshold {
    type Error = EnsembleError;

    fn try_from(value: i64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Threshold> for u8 {
    fn from(t: Threshold) -> u8 {
        t.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub para_id: String,
    pub dimension: Dimension,
    pub votes: PerKind<bool>,
    /// Raw scores on each kind's own scale.
    pub scores: PerKind<f64>,
}

impl VoteRecord {
    pub fn positive_votes(&self) -> u8 {
        self.votes.iter().filter(|(_, &v)| v).count() as u8
    }

    /// Average of the five scores mapped to `[0, 1]` (svm margins through the
    /// logistic function).
    pub fn mean_score(&self) -> f64 {
        self.scores.iter().map(|(k, &s)| k.unit_score(s)).sum::<f64>() / LearnerKind::ALL.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub para_id: String,
    pub dimension: Dimension,
    pub positive_votes: u8,
    pub decision: bool,
    pub threshold_used: Threshold,
}

pub fn combine(votes: &VoteRecord, threshold: Threshold) -> EnsembleDecision {
    let positive_votes = votes.positive_votes();
    EnsembleDecision {
        para_id: votes.para_id.clone(),
        dimension: votes.dimension,
        positive_votes,
        decision: positive_votes >= threshold.get(),
        threshold_used: threshold,
    }
}

/// Like [`combine`] with an unchecked integer threshold.
pub fn combine_checked(votes: &VoteRecord, threshold: i64) -> Result<EnsembleDecision> {
    Ok(combine(votes, Threshold::new(threshold)?))
}

/// A paragraph's votes and ensemble decision for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub votes: VoteRecord,
    pub decision: EnsembleDecision,
}

/// Runs every model of the bundle over the paragraphs. Output order is input
/// order, with pc before ae for each paragraph.
pub fn classify_corpus<L>(
    para_ids: &[&str],
    vectors: &L,
    bundle: &ModelBundle,
    threshold: Threshold,
) -> Result<Vec<Classification>>
where
    L: VectorLookup + ?Sized,
{
    bundle.validate()?;
    if vectors.dim() != bundle.dim {
        return Err(EnsembleError::Classifier(ClassifierError::DimensionMismatch {
            expected: bundle.dim,
            got: vectors.dim(),
        }));
    }
    let models = |d: Dimension| PerKind::try_from_fn(|k| bundle.model(d, k));
    let pc = models(Dimension::Pc)?;
    let ae = models(Dimension::Ae)?;

    let per_paragraph: Vec<Result<[Classification; 2]>> = para_ids
        .par_iter()
        .map(|&id| {
            let v = vectors.vector(id).ok_or_else(|| EnsembleError::MissingVector(id.to_owned()))?;
            let x: Vec<f64> = v.values().iter().map(|&f| f64::from(f)).collect();
            let run = |dimension: Dimension, set: &PerKind<&crate::classifiers::TrainedModel>| -> Result<Classification> {
                let preds = PerKind::try_from_fn(|k| set.get(k).predict(&x))?;
                let votes = VoteRecord {
                    para_id: id.to_owned(),
                    dimension,
                    votes: preds.map(|_, p| p.label),
                    scores: preds.map(|_, p| p.score),
                };
                let decision = combine(&votes, threshold);
                Ok(Classification { votes, decision })
            };
            Ok([run(Dimension::Pc, &pc)?, run(Dimension::Ae, &ae)?])
        })
        .collect();

    let mut out = Vec::with_capacity(para_ids.len() * 2);
    for r in per_paragraph {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub para_id: String,
    pub dimension: Dimension,
    pub positive_votes: u8,
    pub mean_score: f64,
    pub votes: PerKind<bool>,
    /// Included only for recall auditing: one vote short of the threshold.
    #[serde(default)]
    pub near_miss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub threshold: Threshold,
    pub entries: Vec<ShortlistEntry>,
}

impl Shortlist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_dimension(&self, dimension: Dimension) -> impl Iterator<Item = &ShortlistEntry> {
        self.entries.iter().filter(move |e| e.dimension == dimension)
    }

    pub fn contains(&self, para_id: &str, dimension: Dimension) -> bool {
        self.entries.iter().any(|e| e.para_id == para_id && e.dimension == dimension)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortlistOptions {
    pub include_near_miss: bool,
}

fn shortlist_order(a: &ShortlistEntry, b: &ShortlistEntry) -> Ordering {
    b.positive_votes
        .cmp(&a.positive_votes)
        .then_with(|| b.mean_score.total_cmp(&a.mean_score))
        .then_with(|| a.para_id.cmp(&b.para_id))
        .then_with(|| a.dimension.cmp(&b.dimension))
}

/// Flagged paragraphs ordered by votes, then mean score (both descending),
/// then para_id.
pub fn make_shortlist(
    decisions: &[EnsembleDecision],
    votes: &[VoteRecord],
    options: ShortlistOptions,
) -> Result<Shortlist> {
    if decisions.len() != votes.len() {
        return Err(EnsembleError::InconsistentInputs(format!(
            "{} decisions but {} vote records",
            decisions.len(),
            votes.len()
        )));
    }
    let mut threshold = None;
    let mut entries = Vec::new();
    for (d, v) in decisions.iter().zip(votes) {
        if d.para_id != v.para_id || d.dimension != v.dimension {
            return Err(EnsembleError::InconsistentInputs(format!(
                "decision for {}/{} paired with votes for {}/{}",
                d.para_id, d.dimension, v.para_id, v.dimension
            )));
        }
        if d.positive_votes != v.positive_votes() || d.decision != (d.positive_votes >= d.threshold_used.get()) {
            return Err(EnsembleError::InconsistentInputs(format!(
                "decision for {}/{} does not follow from its votes",
                d.para_id, d.dimension
            )));
        }
        match threshold {
            None => threshold = Some(d.threshold_used),
            Some(t) if t != d.threshold_used => {
                return Err(EnsembleError::InconsistentInputs("mixed thresholds".into()));
            }
            _ => {}
        }
        let near_miss = !d.decision && options.include_near_miss && d.positive_votes + 1 == d.threshold_used.get();
        if d.decision || near_miss {
            entries.push(ShortlistEntry {
                para_id: d.para_id.clone(),
                dimension: d.dimension,
                positive_votes: d.positive_votes,
                mean_score: v.mean_score(),
                votes: v.votes,
                near_miss,
            });
        }
    }
    entries.sort_by(shortlist_order);
    for pair in entries.windows(2) {
        if pair[0].para_id == pair[1].para_id && pair[0].dimension == pair[1].dimension {
            return Err(EnsembleError::InconsistentInputs(format!(
                "duplicate decision for {}/{}",
                pair[0].para_id, pair[0].dimension
            )));
        }
    }
    Ok(Shortlist {
        threshold: threshold.unwrap_or_default(),
        entries,
    })
}

/// Shortlist straight from classification output.
pub fn shortlist_from(classified: &[Classification], options: ShortlistOptions) -> Result<Shortlist> {
    let decisions: Vec<EnsembleDecision> = classified.iter().map(|c| c.decision.clone()).collect();
    let votes: Vec<VoteRecord> = classified.iter().map(|c| c.votes.clone()).collect();
    make_shortlist(&decisions, &votes, options)
}
