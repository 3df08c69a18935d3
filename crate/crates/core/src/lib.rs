//! Paragraph-level coding of populist rhetoric with a five-learner voting
//! ensemble, plus the review store used for human verification.

pub mod classifiers;
pub mod corpus;
pub mod embedding;
pub mod ensemble;
pub mod evaluation;
pub mod service;

pub use classifiers::{HyperParams, LearnerKind, ModelBundle, TrainedModel, TrainingSet};
pub use corpus::{Corpus, CorpusView, Dimension, Document, Label, Paragraph, Provenance, Role};
pub use embedding::{EmbeddingProvider, EmbeddingVector, Fingerprint, ProviderSpec, VectorCache, VectorLookup};
pub use ensemble::{Classification, PerKind, Shortlist, ShortlistEntry, Threshold, VoteRecord};
pub use evaluation::{ConfusionMatrix, EvaluationReport, MetricReport, ReportFormat};
pub use service::{PipelineConfig, ReviewStore, ServiceError};
