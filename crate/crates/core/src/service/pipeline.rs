use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use log::{debug, info};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::store::{NewSession, ReviewStore, ScopeDecision, SessionItem, SessionSummary};
use super::{PipelineConfig, Result, ServiceError};
use crate::classifiers::{fit, BundleEntry, LearnerKind, ModelBundle, TrainedModel, TrainingSet};
use crate::corpus::{CorpusView, Dimension, Paragraph, Role};
use crate::embedding::{Fingerprint, VectorLookup};
use crate::ensemble::{classify_corpus, shortlist_from, Classification, Shortlist};
use crate::evaluation::{evaluate_classifications, EvaluationReport, GoldParagraph};

/// Training-role paragraphs with a gold label for `dimension`, joined with
/// their vectors. Nothing outside the training role is read.
pub fn training_set(corpus: &dyn CorpusView, vectors: &dyn VectorLookup, dimension: Dimension) -> Result<TrainingSet> {
    let paragraphs = corpus.paragraphs_with_role(Role::Train);
    if paragraphs.is_empty() {
        return Err(ServiceError::RoleEmpty(Role::Train));
    }
    let mut rows = Vec::with_capacity(paragraphs.len());
    for p in paragraphs {
        if p.role != Some(Role::Train) {
            continue;
        }
        let Some(label) = p.labels.get(dimension).as_bool() else {
            continue;
        };
        let v = vectors
            .vector(&p.para_id)
            .ok_or_else(|| ServiceError::MissingVector(p.para_id.clone()))?;
        rows.push((p.para_id.as_str(), v, label));
    }
    if rows.is_empty() {
        return Err(ServiceError::MissingGold(Role::Train));
    }
    TrainingSet::from_vectors(dimension, &rows).map_err(|source| ServiceError::Training {
        dimension,
        kind: None,
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub dimension: Dimension,
    pub kind: LearnerKind,
    pub n_train: usize,
    pub n_positive: usize,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    /// One per (dimension, learner), pc first.
    pub fits: Vec<FitReport>,
}

/// Fits all ten models. The bundle depends only on the training data,
/// hyperparameters and seed; timings live in `fits`.
pub fn cmd_train(
    config: &PipelineConfig,
    corpus: &dyn CorpusView,
    vectors: &dyn VectorLookup,
    provider_fingerprint: Fingerprint,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sets = [Dimension::Pc, Dimension::Ae]
        .into_iter()
        .map(|d| training_set(corpus, vectors, d))
        .collect::<Result<Vec<_>>>()?;
    for s in &sets {
        info!(
            "training {}: {} paragraphs, {} positive, dim {}",
            s.dimension(),
            s.len(),
            s.positives(),
            s.dim()
        );
    }

    let jobs: Vec<(usize, LearnerKind)> = (0..sets.len())
        .flat_map(|i| LearnerKind::ALL.into_iter().map(move |k| (i, k)))
        .collect();
    let fitted: Vec<Result<(TrainedModel, FitReport)>> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let set = &sets[i];
            let dimension = set.dimension();
            let start = Instant::now();
            let model = fit(kind, set, &config.hyper, config.seed).map_err(|source| ServiceError::Training {
                dimension,
                kind: Some(kind),
                source,
            })?;
            let report = FitReport {
                dimension,
                kind,
                n_train: set.len(),
                n_positive: set.positives(),
                objective: model.summary.objective,
                iterations: model.summary.iterations,
                converged: model.summary.converged,
                duration: start.elapsed(),
            };
            Ok((model, report))
        })
        .collect();

    let mut fits = Vec::with_capacity(jobs.len());
    let mut models: BTreeMap<Dimension, Vec<TrainedModel>> = BTreeMap::new();
    for r in fitted {
        let (model, report) = r?;
        match report.objective {
            Some(obj) => info!(
                "fit {}/{}: objective {obj:.6}, {} iterations, converged {}, {:.1?}",
                report.dimension, report.kind, report.iterations, report.converged, report.duration
            ),
            None => info!("fit {}/{}: {:.1?}", report.dimension, report.kind, report.duration),
        }
        models.entry(model.dimension).or_default().push(model);
        fits.push(report);
    }

    let entries = sets
        .iter()
        .map(|s| BundleEntry {
            dimension: s.dimension(),
            training_checksum: s.checksum(),
            n_train: s.len(),
            n_positive: s.positives(),
            models: models.remove(&s.dimension()).unwrap_or_default(),
        })
        .collect();
    let bundle = ModelBundle {
        provider_fingerprint,
        dim: vectors.dim(),
        hyper: config.hyper,
        seed: config.seed,
        entries,
    };
    bundle.validate()?;
    Ok(TrainOutcome { bundle, fits })
}

/// Models only make sense on vectors from the provider they were trained on.
pub fn check_fingerprint(bundle: &ModelBundle, vectors: Fingerprint) -> Result<()> {
    if bundle.provider_fingerprint != vectors {
        return Err(ServiceError::ProviderMismatch {
            bundle: bundle.provider_fingerprint.to_hex(),
            vectors: vectors.to_hex(),
        });
    }
    Ok(())
}

pub fn gold_paragraphs<'a>(paragraphs: &[&'a Paragraph]) -> Vec<GoldParagraph<'a>> {
    paragraphs
        .iter()
        .map(|p| GoldParagraph {
            para_id: &p.para_id,
            year: p.year,
            party: &p.party,
            pc: p.labels.pc.as_bool(),
            ae: p.labels.ae.as_bool(),
        })
        .collect()
}

fn role_paragraphs(corpus: &dyn CorpusView, role: Role) -> Result<Vec<&Paragraph>> {
    let paragraphs: Vec<&Paragraph> = corpus
        .paragraphs_with_role(role)
        .into_iter()
        .filter(|p| p.role == Some(role))
        .collect();
    if paragraphs.is_empty() {
        return Err(ServiceError::RoleEmpty(role));
    }
    if !paragraphs.iter().any(|p| p.labels.pc.is_labeled() || p.labels.ae.is_labeled()) {
        return Err(ServiceError::MissingGold(role));
    }
    Ok(paragraphs)
}

/// Classifies the paragraphs of `role` and scores them against gold.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    bundle: &ModelBundle,
    corpus: &dyn CorpusView,
    vectors: &dyn VectorLookup,
    role: Role,
) -> Result<EvaluationReport> {
    let paragraphs = role_paragraphs(corpus, role)?;
    let ids: Vec<&str> = paragraphs.iter().map(|p| p.para_id.as_str()).collect();
    let classified = classify_corpus(&ids, vectors, bundle, config.threshold)?;
    debug!("evaluating {} {role} paragraphs", ids.len());
    Ok(evaluate_classifications(role, &gold_paragraphs(&paragraphs), &classified)?)
}

/// Scores previously written decisions against the gold labels of `role`.
/// Decisions for paragraphs outside the role are ignored.
pub fn evaluate_decisions(
    corpus: &dyn CorpusView,
    role: Role,
    decisions: &[Classification],
) -> Result<EvaluationReport> {
    let paragraphs = role_paragraphs(corpus, role)?;
    let wanted: BTreeSet<&str> = paragraphs.iter().map(|p| p.para_id.as_str()).collect();
    let relevant: Vec<Classification> = decisions
        .iter()
        .filter(|c| wanted.contains(c.votes.para_id.as_str()))
        .cloned()
        .collect();
    Ok(evaluate_classifications(role, &gold_paragraphs(&paragraphs), &relevant)?)
}

/// Deterministic session id for a bundle, threshold and paragraph set.
pub fn session_id_for(bundle: &ModelBundle, threshold: u8, para_ids: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(bundle.provider_fingerprint.0);
    for e in &bundle.entries {
        h.update(e.training_checksum);
    }
    h.update(bundle.seed.to_le_bytes());
    h.update([threshold]);
    let mut ids = para_ids.to_vec();
    ids.sort_unstable();
    for id in ids {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    let digest = h.finalize();
    format!("s{}", &hex::encode(digest)[..16])
}

#[derive(Debug, Clone)]
pub struct ShortlistOutcome {
    pub session: SessionSummary,
    pub shortlist: Shortlist,
    pub classifications: Vec<Classification>,
}

/// Classifies `paragraphs`, builds the shortlist and stores it as a review
/// session. Rerunning with the same session id replaces the shortlist in one
/// journal entry; recorded verdicts are kept.
pub fn cmd_shortlist(
    config: &PipelineConfig,
    bundle: &ModelBundle,
    paragraphs: &[&Paragraph],
    vectors: &dyn VectorLookup,
    store: &mut ReviewStore,
    session_id: Option<&str>,
) -> Result<ShortlistOutcome> {
    let ids: Vec<&str> = paragraphs.iter().map(|p| p.para_id.as_str()).collect();
    let classifications = classify_corpus(&ids, vectors, bundle, config.threshold)?;
    let shortlist = shortlist_from(&classifications, config.shortlist)?;

    let by_id: BTreeMap<&str, &Paragraph> = paragraphs.iter().map(|p| (p.para_id.as_str(), *p)).collect();
    let items = shortlist
        .entries
        .iter()
        .map(|e| {
            let p = by_id[e.para_id.as_str()];
            SessionItem {
                para_id: e.para_id.clone(),
                dimension: e.dimension,
                doc_id: p.doc_id.clone(),
                party: p.party.clone(),
                year: p.year,
                register: p.register,
                text: p.text.clone(),
                votes: e.votes,
                positive_votes: e.positive_votes,
                mean_score: e.mean_score,
                near_miss: e.near_miss,
            }
        })
        .collect();
    let mut decided: BTreeMap<&str, ScopeDecision> = BTreeMap::new();
    for c in &classifications {
        let entry = decided.entry(c.votes.para_id.as_str()).or_insert_with(|| ScopeDecision {
            para_id: c.votes.para_id.clone(),
            pc: false,
            ae: false,
        });
        match c.votes.dimension {
            Dimension::Pc => entry.pc = c.decision.decision,
            Dimension::Ae => entry.ae = c.decision.decision,
        }
    }
    let scope = ids.iter().filter_map(|id| decided.remove(id)).collect();

    let session_id = match session_id {
        Some(id) => id.to_owned(),
        None => session_id_for(bundle, config.threshold.get(), &ids),
    };
    let session = store.create_session(NewSession {
        session_id,
        threshold: config.threshold,
        items,
        scope,
    })?;
    info!(
        "session {} revision {}: {} pc and {} ae paragraphs shortlisted",
        session.session_id, session.revision, session.pc_items, session.ae_items
    );
    Ok(ShortlistOutcome {
        session,
        shortlist,
        classifications,
    })
}
