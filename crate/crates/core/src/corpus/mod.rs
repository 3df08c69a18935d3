//! Documents, paragraphs, gold labels and dataset roles.

mod io;
mod segment;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use io::{
    load_documents_dir, read_corpus_jsonl, read_labels_jsonl, read_role_map, write_corpus_jsonl,
    DocumentMeta as DocumentMetaFile,
};
pub use segment::{clean_document, normalize_newlines, split_paragraphs, CleaningConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid document {doc_id:?}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
    #[error("document {0:?} was already ingested")]
    DuplicateDocId(String),
    #[error("document {0:?} contains no paragraphs after cleaning")]
    EmptyDocument(String),
    #[error("label for {doc_id:?} index {index} but the document has {len} paragraphs")]
    LabelIndexOutOfRange { doc_id: String, index: usize, len: usize },
    #[error("more than one label record for {doc_id:?} index {index}")]
    DuplicateLabel { doc_id: String, index: usize },
    #[error("paragraph {index} of {doc_id:?} contains non-Latin letters")]
    NonLatinText { doc_id: String, index: usize },
    #[error("unknown document {0:?}")]
    UnknownDocId(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// The two populism components, coded independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    /// People-centrism.
    Pc,
    /// Anti-elitism.
    Ae,
}

impl Dimension {
    pub const ALL: [Dimension; 2] = [Dimension::Pc, Dimension::Ae];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Pc => "pc",
            Dimension::Ae => "ae",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pc" => Ok(Dimension::Pc),
            "ae" => Ok(Dimension::Ae),
            other => Err(format!("unknown dimension {other:?} (expected pc or ae)")),
        }
    }
}

/// Tri-state gold label. Serialized as `1`, `0` or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Label {
    Positive,
    Negative,
    #[default]
    Unlabeled,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// `Some(true)` for positive, `Some(false)` for negative, `None` if unlabeled.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Positive => Some(true),
            Label::Negative => Some(false),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.as_bool() {
            Some(v) => serializer.serialize_u8(u8::from(v)),
            None => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Option::<u8>::deserialize(deserializer)? {
            None => Ok(Label::Unlabeled),
            Some(0) => Ok(Label::Negative),
            Some(1) => Ok(Label::Positive),
            Some(other) => Err(serde::de::Error::custom(format!(
                "label must be 0, 1 or null, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(default)]
    pub pc: Label,
    #[serde(default)]
    pub ae: Label,
}

impl LabelSet {
    pub fn get(&self, dimension: Dimension) -> Label {
        match dimension {
            Dimension::Pc => self.pc,
            Dimension::Ae => self.ae,
        }
    }

    pub fn set(&mut self, dimension: Dimension, label: Label) {
        match dimension {
            Dimension::Pc => self.pc = label,
            Dimension::Ae => self.ae = label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Register {
    #[default]
    Manifesto,
    Speech,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
    Holdout,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Test, Role::Holdout];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
            Role::Holdout => "holdout",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            "holdout" => Ok(Role::Holdout),
            other => Err(format!("unknown role {other:?} (expected train, test or holdout)")),
        }
    }
}

/// Where an exported label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Gold,
    HumanVerified,
    ModelUnverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProvenanceSet {
    pub pc: Provenance,
    pub ae: Provenance,
}

impl ProvenanceSet {
    pub fn get(&self, dimension: Dimension) -> Provenance {
        match dimension {
            Dimension::Pc => self.pc,
            Dimension::Ae => self.ae,
        }
    }
}

/// A raw input document, already in English plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub party: String,
    pub year: i32,
    #[serde(default)]
    pub register: Register,
    #[serde(default = "default_language")]
    pub source_language: String,
    pub raw_text: String,
}

fn default_language() -> String {
    "en".to_owned()
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| CorpusError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason: reason.to_owned(),
        };
        if self.doc_id.trim().is_empty() {
            return Err(invalid("doc_id is empty"));
        }
        if self.doc_id.contains('#') {
            return Err(invalid("doc_id must not contain '#'"));
        }
        if self.raw_text.is_empty() {
            return Err(invalid("raw_text is empty"));
        }
        if !(1900..=2100).contains(&self.year) {
            return Err(invalid("year outside 1900..=2100"));
        }
        Ok(())
    }
}

/// One coding unit. Serialized as one line of the corpus JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub para_id: String,
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub party: String,
    pub year: i32,
    pub register: Register,
    #[serde(flatten)]
    pub labels: LabelSet,
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ProvenanceSet>,
}

/// `doc_id#00042`: sortable and stable across re-ingestion.
pub fn para_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}#{index:05}")
}

/// Externally supplied gold labels, joined to paragraphs by `(doc_id, index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub doc_id: String,
    pub index: usize,
    #[serde(default)]
    pub pc: Label,
    #[serde(default)]
    pub ae: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub cleaning: CleaningConfig,
    /// Reject paragraphs containing letters outside the Latin script blocks.
    pub require_latin_script: bool,
}

/// Outcome of ingesting one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub doc_id: String,
    pub paragraphs: usize,
    pub labeled: usize,
    /// Label records that named a different document.
    pub unmatched_labels: Vec<LabelRecord>,
}

/// Document after cleaning, segmentation and label join, not yet in a corpus.
#[derive(Debug, Clone)]
pub struct PreparedDocument {
    pub meta: DocumentInfo,
    pub paragraphs: Vec<Paragraph>,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentInfo {
    pub doc_id: String,
    pub party: String,
    pub year: i32,
    pub register: Register,
    pub source_language: Option<String>,
    pub role: Option<Role>,
}

fn is_latin_letter(c: char) -> bool {
    matches!(c as u32, 0x0041..=0x024F | 0x1E00..=0x1EFF | 0x2C60..=0x2C7F | 0xA720..=0xA7FF)
}

/// Cleans, segments and labels one document. Pure, so documents can be
/// prepared in parallel before a single writer inserts them.
pub fn prepare_document(
    document: &Document,
    labels: &[LabelRecord],
    config: &IngestConfig,
) -> Result<PreparedDocument> {
    document.validate()?;
    let cleaned = clean_document(&document.raw_text, &config.cleaning);
    let texts = split_paragraphs(&cleaned);
    if texts.is_empty() {
        return Err(CorpusError::EmptyDocument(document.doc_id.clone()));
    }
    if config.require_latin_script {
        for (index, text) in texts.iter().enumerate() {
            if text.chars().any(|c| c.is_alphabetic() && !is_latin_letter(c)) {
                return Err(CorpusError::NonLatinText {
                    doc_id: document.doc_id.clone(),
                    index,
                });
            }
        }
    }

    let mut joined: HashMap<usize, LabelSet> = HashMap::new();
    let mut unmatched = Vec::new();
    for record in labels {
        if record.doc_id != document.doc_id {
            unmatched.push(record.clone());
            continue;
        }
        if record.index >= texts.len() {
            return Err(CorpusError::LabelIndexOutOfRange {
                doc_id: record.doc_id.clone(),
                index: record.index,
                len: texts.len(),
            });
        }
        let set = LabelSet {
            pc: record.pc,
            ae: record.ae,
        };
        if joined.insert(record.index, set).is_some() {
            return Err(CorpusError::DuplicateLabel {
                doc_id: record.doc_id.clone(),
                index: record.index,
            });
        }
    }

    let labeled = joined.len();
    let paragraphs = texts
        .into_iter()
        .enumerate()
        .map(|(index, text)| Paragraph {
            para_id: para_id(&document.doc_id, index),
            doc_id: document.doc_id.clone(),
            index,
            text,
            party: document.party.clone(),
            year: document.year,
            register: document.register,
            labels: joined.get(&index).copied().unwrap_or_default(),
            role: None,
            provenance: None,
        })
        .collect::<Vec<_>>();

    Ok(PreparedDocument {
        meta: DocumentInfo {
            doc_id: document.doc_id.clone(),
            party: document.party.clone(),
            year: document.year,
            register: document.register,
            source_language: Some(document.source_language.clone()),
            role: None,
        },
        report: IngestReport {
            doc_id: document.doc_id.clone(),
            paragraphs: paragraphs.len(),
            labeled,
            unmatched_labels: unmatched,
        },
        paragraphs,
    })
}

/// Paragraph counts after role assignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub train: usize,
    pub test: usize,
    pub holdout: usize,
    pub unassigned: usize,
}

/// Borrowed view of the corpus split by role.
#[derive(Debug, Default)]
pub struct Partitions<'a> {
    pub train: Vec<&'a Paragraph>,
    pub test: Vec<&'a Paragraph>,
    pub holdout: Vec<&'a Paragraph>,
    pub unassigned: Vec<&'a Paragraph>,
}

impl<'a> Partitions<'a> {
    pub fn get(&self, role: Role) -> &[&'a Paragraph] {
        match role {
            Role::Train => &self.train,
            Role::Test => &self.test,
            Role::Holdout => &self.holdout,
        }
    }

    pub fn counts(&self) -> RoleCounts {
        RoleCounts {
            train: self.train.len(),
            test: self.test.len(),
            holdout: self.holdout.len(),
            unassigned: self.unassigned.len(),
        }
    }
}

/// Read access to paragraphs by role.
///
/// Training code receives a `&dyn CorpusView` and only ever asks for
/// [`Role::Train`]; tests wrap a corpus to record which roles were read.
pub trait CorpusView: Sync {
    fn paragraphs_with_role(&self, role: Role) -> Vec<&Paragraph>;
}

/// An in-memory corpus with a single writer.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: BTreeMap<String, DocumentInfo>,
    paragraphs: Vec<Paragraph>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a corpus from paragraph records, checking its invariants.
    pub fn from_paragraphs(paragraphs: Vec<Paragraph>) -> Result<Self> {
        let mut documents: BTreeMap<String, DocumentInfo> = BTreeMap::new();
        let mut ids = HashSet::new();
        let mut per_doc: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for p in &paragraphs {
            if p.text.trim().is_empty() {
                return Err(CorpusError::InvalidCorpus(format!("{} has empty text", p.para_id)));
            }
            if !ids.insert(p.para_id.as_str()) {
                return Err(CorpusError::InvalidCorpus(format!(
                    "duplicate para_id {}",
                    p.para_id
                )));
            }
            per_doc.entry(p.doc_id.clone()).or_default().push(p.index);
            match documents.get(&p.doc_id) {
                None => {
                    documents.insert(
                        p.doc_id.clone(),
                        DocumentInfo {
                            doc_id: p.doc_id.clone(),
                            party: p.party.clone(),
                            year: p.year,
                            register: p.register,
                            source_language: None,
                            role: p.role,
                        },
                    );
                }
                Some(info) => {
                    if info.party != p.party || info.year != p.year || info.role != p.role {
                        return Err(CorpusError::InvalidCorpus(format!(
                            "{} disagrees with its document's metadata or role",
                            p.para_id
                        )));
                    }
                }
            }
        }
        for (doc_id, mut indices) in per_doc {
            indices.sort_unstable();
            if indices.iter().enumerate().any(|(i, &idx)| i != idx) {
                return Err(CorpusError::InvalidCorpus(format!(
                    "paragraph indices of {doc_id} are not dense 0..n"
                )));
            }
        }
        Ok(Self {
            documents,
            paragraphs,
        })
    }

    pub fn ingest(
        &mut self,
        document: &Document,
        labels: &[LabelRecord],
        config: &IngestConfig,
    ) -> Result<IngestReport> {
        if self.documents.contains_key(&document.doc_id) {
            return Err(CorpusError::DuplicateDocId(document.doc_id.clone()));
        }
        let prepared = prepare_document(document, labels, config)?;
        self.insert_prepared(prepared)
    }

    /// Prepares documents in parallel, then inserts them in input order.
    /// Label records are routed to their document; records naming no
    /// ingested document are returned in the last element.
    pub fn ingest_many(
        &mut self,
        documents: &[Document],
        labels: &[LabelRecord],
        config: &IngestConfig,
    ) -> Result<(Vec<IngestReport>, Vec<LabelRecord>)> {
        let mut seen = HashSet::new();
        for doc in documents {
            if self.documents.contains_key(&doc.doc_id) || !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
            }
        }
        let mut by_doc: HashMap<&str, Vec<LabelRecord>> = HashMap::new();
        let mut orphans = Vec::new();
        for record in labels {
            if seen.contains(record.doc_id.as_str()) {
                by_doc.entry(record.doc_id.as_str()).or_default().push(record.clone());
            } else {
                orphans.push(record.clone());
            }
        }
        let prepared = documents
            .par_iter()
            .map(|doc| {
                let own = by_doc.get(doc.doc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                prepare_document(doc, own, config)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reports = Vec::with_capacity(prepared.len());
        for doc in prepared {
            reports.push(self.insert_prepared(doc)?);
        }
        Ok((reports, orphans))
    }

    pub fn insert_prepared(&mut self, prepared: PreparedDocument) -> Result<IngestReport> {
        let doc_id = prepared.meta.doc_id.clone();
        if self.documents.contains_key(&doc_id) {
            return Err(CorpusError::DuplicateDocId(doc_id));
        }
        self.documents.insert(doc_id, prepared.meta);
        self.paragraphs.extend(prepared.paragraphs);
        Ok(prepared.report)
    }

    /// Assigns each mapped document's paragraphs to a role. Documents absent
    /// from the map keep their current role.
    pub fn assign_roles(&mut self, role_map: &BTreeMap<String, Role>) -> Result<RoleCounts> {
        if let Some(unknown) = role_map.keys().find(|id| !self.documents.contains_key(*id)) {
            return Err(CorpusError::UnknownDocId(unknown.clone()));
        }
        for (doc_id, role) in role_map {
            if let Some(info) = self.documents.get_mut(doc_id) {
                info.role = Some(*role);
            }
        }
        for p in &mut self.paragraphs {
            if let Some(role) = role_map.get(&p.doc_id) {
                p.role = Some(*role);
            }
        }
        Ok(self.partition().counts())
    }

    pub fn partition(&self) -> Partitions<'_> {
        let mut parts = Partitions::default();
        for p in &self.paragraphs {
            match p.role {
                Some(Role::Train) => parts.train.push(p),
                Some(Role::Test) => parts.test.push(p),
                Some(Role::Holdout) => parts.holdout.push(p),
                None => parts.unassigned.push(p),
            }
        }
        parts
    }

    pub fn paragraphs(&self) -> &[Paragraph] {
        &self.paragraphs
    }

    pub fn paragraph(&self, para_id: &str) -> Option<&Paragraph> {
        self.paragraphs.iter().find(|p| p.para_id == para_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &DocumentInfo> {
        self.documents.values()
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }
}

impl CorpusView for Corpus {
    fn paragraphs_with_role(&self, role: Role) -> Vec<&Paragraph> {
        self.paragraphs.iter().filter(|p| p.role == Some(role)).collect()
    }
}
