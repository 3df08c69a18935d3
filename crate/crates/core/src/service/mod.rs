//! Pipeline orchestration and the review store behind the HTTP API.

mod config;
mod pipeline;
mod store;

use thiserror::Error;

pub use config::{EmbedSettings, PathsConfig, PipelineConfig, CONFIG_VERSION};
pub use pipeline::{
    check_fingerprint, cmd_evaluate, cmd_shortlist, cmd_train, evaluate_decisions, gold_paragraphs, session_id_for,
    training_set, FitReport, ShortlistOutcome, TrainOutcome,
};
pub use store::{
    CrashPoint, DimensionProgress, HumanDecision, NewSession, PageItem, Progress, ReviewStore, ScopeDecision, Session, SessionItem,
    SessionSummary, ShortlistPage, Verdict, VerdictSubmission, DEFAULT_PAGE_LIMIT, MAX_PAGE_LIMIT,
};

use crate::classifiers::{ClassifierError, LearnerKind};
use crate::corpus::{CorpusError, Dimension, Role};
use crate::embedding::EmbeddingError;
use crate::ensemble::EnsembleError;
use crate::evaluation::EvalError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no paragraphs carry role {0}")]
    RoleEmpty(Role),
    #[error("no gold labels among {0} paragraphs")]
    MissingGold(Role),
    #[error("training {dimension}{}: {source}", kind.map(|k| format!("/{k}")).unwrap_or_default())]
    Training {
        dimension: Dimension,
        kind: Option<LearnerKind>,
        #[source]
        source: ClassifierError,
    },
    #[error("paragraph {0:?} has no vector")]
    MissingVector(String),
    #[error("models were trained on provider {bundle} but the vectors come from {vectors}")]
    ProviderMismatch { bundle: String, vectors: String },
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("paragraph {para_id:?} is not on the {dimension} shortlist")]
    UnknownParagraph { para_id: String, dimension: Dimension },
    #[error("bad cursor {0:?}")]
    BadCursor(String),
    #[error("malformed submission: {0}")]
    MalformedSubmission(String),
    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
    #[error("review store is unusable after an earlier failure; reopen it")]
    StorePoisoned,
    #[error("corrupt review store: {0}")]
    CorruptStore(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable code, used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "invalid_config",
            ServiceError::RoleEmpty(_) => "role_empty",
            ServiceError::MissingGold(_) => "missing_gold",
            ServiceError::Training { .. } => "training_failed",
            ServiceError::MissingVector(_) => "missing_vector",
            ServiceError::ProviderMismatch { .. } => "provider_mismatch",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownParagraph { .. } => "unknown_paragraph",
            ServiceError::BadCursor(_) => "bad_cursor",
            ServiceError::MalformedSubmission(_) => "malformed_submission",
            ServiceError::InjectedCrash(_) | ServiceError::StorePoisoned | ServiceError::CorruptStore(_) => {
                "store_unavailable"
            }
            ServiceError::Corpus(_) => "corpus_error",
            ServiceError::Embedding(_) => "embedding_error",
            ServiceError::Classifier(_) => "classifier_error",
            ServiceError::Ensemble(_) => "ensemble_error",
            ServiceError::Evaluation(_) => "evaluation_error",
            ServiceError::Io(_) => "io_error",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
