#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Mutex;

use paracode_core::corpus::{
    load_documents_dir, read_labels_jsonl, read_role_map, Corpus, CorpusView, IngestConfig, Paragraph, Role,
};
use paracode_core::embedding::{
    embed_corpus, EmbedOptions, EmbeddingProvider, EmbeddingVector, HashingEmbedder, VectorCache, VectorLookup,
};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus")
}

pub fn mini_corpus() -> Corpus {
    let dir = fixture_dir();
    let docs = load_documents_dir(&dir).unwrap();
    let labels = read_labels_jsonl(&dir.join("labels.jsonl")).unwrap();
    let mut corpus = Corpus::new();
    let (_, orphans) = corpus.ingest_many(&docs, &labels, &IngestConfig::default()).unwrap();
    assert!(orphans.is_empty());
    corpus.assign_roles(&read_role_map(&dir.join("roles.json")).unwrap()).unwrap();
    corpus
}

pub fn embedder() -> HashingEmbedder {
    HashingEmbedder::new(1024, 42)
}

pub fn embed(corpus: &Corpus) -> VectorCache {
    let provider = embedder();
    let mut cache = VectorCache::new(provider.fingerprint(), provider.dim());
    embed_corpus(
        corpus.paragraphs().iter().map(|p| (p.para_id.as_str(), p.text.as_str())),
        &provider,
        &mut cache,
        EmbedOptions::default(),
    )
    .unwrap();
    cache
}

/// Records every role and paragraph the code under test asks for.
pub struct LoggingCorpus<'a> {
    pub inner: &'a Corpus,
    pub roles: Mutex<BTreeSet<Role>>,
}

impl<'a> LoggingCorpus<'a> {
    pub fn new(inner: &'a Corpus) -> Self {
        Self {
            inner,
            roles: Mutex::new(BTreeSet::new()),
        }
    }
}

impl CorpusView for LoggingCorpus<'_> {
    fn paragraphs_with_role(&self, role: Role) -> Vec<&Paragraph> {
        self.roles.lock().unwrap().insert(role);
        self.inner.paragraphs_with_role(role)
    }
}

pub struct LoggingVectors<'a> {
    pub inner: &'a VectorCache,
    pub requested: Mutex<BTreeSet<String>>,
}

impl<'a> LoggingVectors<'a> {
    pub fn new(inner: &'a VectorCache) -> Self {
        Self {
            inner,
            requested: Mutex::new(BTreeSet::new()),
        }
    }
}

impl VectorLookup for LoggingVectors<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn vector(&self, para_id: &str) -> Option<&EmbeddingVector> {
        self.requested.lock().unwrap().insert(para_id.to_owned());
        self.inner.vector(para_id)
    }
}
