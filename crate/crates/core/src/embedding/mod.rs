//! Fixed-dimension paragraph vectors from pluggable providers.
//!
//! Two provider families exist: external sources (a pre-computed vector
//! file, or a sidecar HTTP service wrapping a sentence encoder) and the
//! built-in [`HashingEmbedder`]. Vectors are cached per paragraph in a
//! [`VectorCache`] keyed by the provider's [`Fingerprint`].

mod cache;
mod hashing;
mod provider;
mod vecfile;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::VectorCache;
pub use hashing::{
    hashing_embed, token_bucket, token_hash, tokenize, HashingEmbedder, DEFAULT_HASH_FEATURES,
    DEFAULT_HASH_SEED,
};
pub use provider::{FileProvider, ServiceProvider};
pub use vecfile::{read_vector_file, write_vector_file, VectorFile, VECTOR_FILE_MAGIC};

/// Dimension of the external sentence encoder's output.
pub const DEFAULT_EXTERNAL_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("paragraph text is empty")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no vector for paragraph {0:?}")]
    MissingVector(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("vector is empty")]
    EmptyVector,
    #[error("paragraph {para_id}: {source}")]
    AtParagraph {
        para_id: String,
        #[source]
        source: Box<EmbeddingError>,
    },
    #[error("malformed vector file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// A dense, finite feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { values })
    }

    pub(crate) fn from_values_unchecked(values: Vec<f32>) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// SHA-256 identity of a provider configuration.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of(description: &str) -> Self {
        Self(Sha256::digest(description.as_bytes()).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Provider configuration as written in pipeline configs and on the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    ExternalFile {
        path: PathBuf,
        #[serde(default = "default_external_dim")]
        dim: usize,
    },
    ExternalService {
        url: String,
        #[serde(default = "default_external_dim")]
        dim: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
    Hashing {
        #[serde(default = "default_hash_features")]
        n_features: usize,
        #[serde(default = "default_hash_seed")]
        seed: u32,
    },
}

fn default_external_dim() -> usize {
    DEFAULT_EXTERNAL_DIM
}
fn default_batch() -> usize {
    32
}
fn default_hash_features() -> usize {
    DEFAULT_HASH_FEATURES
}
fn default_hash_seed() -> u32 {
    DEFAULT_HASH_SEED
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Hashing {
            n_features: DEFAULT_HASH_FEATURES,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl ProviderSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProviderSpec::ExternalFile { dim, .. } | ProviderSpec::ExternalService { dim, .. } => {
                *dim
            }
            ProviderSpec::Hashing { n_features, .. } => *n_features,
        }
    }

    /// Opens the provider, loading files or creating HTTP clients as needed.
    pub fn open(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            ProviderSpec::ExternalFile { path, dim } => Ok(Box::new(FileProvider::open(path, *dim)?)),
            ProviderSpec::ExternalService {
                url,
                dim,
                batch_size,
            } => Ok(Box::new(ServiceProvider::new(url, *dim, *batch_size))),
            ProviderSpec::Hashing { n_features, seed } => {
                if *n_features < 2 {
                    return Err(EmbeddingError::ProviderUnavailable(
                        "hashing provider needs n_features >= 2".into(),
                    ));
                }
                Ok(Box::new(HashingEmbedder::new(*n_features, *seed)))
            }
        }
    }
}

impl FromStr for ProviderSpec {
    type Err = String;

    /// `hashing`, `hashing:<n_features>[:<seed>]`, `file:<path>` or `http:<url>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "hashing" {
            return Ok(ProviderSpec::default());
        }
        if let Some(rest) = s.strip_prefix("hashing:") {
            let mut parts = rest.splitn(2, ':');
            let n_features = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| format!("bad n_features in {s:?}: {e}"))?;
            let seed = match parts.next() {
                Some(seed) => seed.parse().map_err(|e| format!("bad seed in {s:?}: {e}"))?,
                None => DEFAULT_HASH_SEED,
            };
            return Ok(ProviderSpec::Hashing { n_features, seed });
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ProviderSpec::ExternalFile {
                path: PathBuf::from(path),
                dim: DEFAULT_EXTERNAL_DIM,
            });
        }
        if let Some(url) = s.strip_prefix("http:") {
            // Accept both `http:host:port` and `http:http://host:port`.
            let url = if url.starts_with("http://") || url.starts_with("https://") {
                url.to_owned()
            } else {
                format!("http://{}", url.trim_start_matches('/'))
            };
            return Ok(ProviderSpec::ExternalService {
                url,
                dim: DEFAULT_EXTERNAL_DIM,
                batch_size: default_batch(),
            });
        }
        Err(format!(
            "unknown provider {s:?} (expected hashing, file:<path> or http:<url>)"
        ))
    }
}

/// One paragraph to embed.
#[derive(Debug, Clone, Copy)]
pub struct EmbedRequest<'a> {
    pub para_id: &'a str,
    pub text: &'a str,
}

/// Anything that turns paragraphs into vectors of a fixed dimension.
///
/// Implementations must be reentrant: `embed_corpus` calls `embed_batch`
/// from several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn fingerprint(&self) -> Fingerprint;

    /// Returns one vector per request, in request order.
    fn embed_batch(&self, items: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingVector>>;
}

/// Read access to stored vectors.
pub trait VectorLookup: Sync {
    fn dim(&self) -> usize;

    fn vector(&self, para_id: &str) -> Option<&EmbeddingVector>;
}

fn check(vector: &EmbeddingVector, dim: usize) -> Result<()> {
    if vector.dim() != dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: dim,
            got: vector.dim(),
        });
    }
    Ok(())
}

/// Embeds one paragraph, enforcing the provider's dimension.
pub fn embed(provider: &dyn EmbeddingProvider, para_id: &str, text: &str) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let mut out = provider.embed_batch(&[EmbedRequest { para_id, text }])?;
    if out.len() != 1 {
        return Err(EmbeddingError::ProviderUnavailable(format!(
            "provider returned {} vectors for 1 text",
            out.len()
        )));
    }
    let vector = out.pop().expect("length checked");
    check(&vector, provider.dim())?;
    Ok(vector)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedOptions {
    /// Upper bound on concurrent provider calls.
    pub parallelism: usize,
    pub batch_size: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmbedStats {
    pub computed: usize,
    pub reused: usize,
    /// The cache was built for another provider and has been cleared.
    pub invalidated: bool,
}

fn annotate(para_id: &str, error: EmbeddingError) -> EmbeddingError {
    match error {
        already @ EmbeddingError::AtParagraph { .. } => already,
        other => EmbeddingError::AtParagraph {
            para_id: para_id.to_owned(),
            source: Box::new(other),
        },
    }
}

fn embed_chunk(
    provider: &dyn EmbeddingProvider,
    chunk: &[EmbedRequest<'_>],
) -> Result<Vec<EmbeddingVector>> {
    let run = |items: &[EmbedRequest<'_>]| -> Result<Vec<EmbeddingVector>> {
        let vectors = provider.embed_batch(items)?;
        if vectors.len() != items.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                items.len()
            )));
        }
        for v in &vectors {
            check(v, provider.dim())?;
        }
        Ok(vectors)
    };
    match run(chunk) {
        Ok(vectors) => Ok(vectors),
        Err(batch_error) => {
            // Retry one at a time to name the paragraph that failed.
            for item in chunk {
                if let Err(e) = run(std::slice::from_ref(item)) {
                    return Err(annotate(item.para_id, e));
                }
            }
            Err(annotate(chunk[0].para_id, batch_error))
        }
    }
}

/// Fills `cache` with a vector for every paragraph, calling the provider
/// only for paragraphs that are not cached yet.
pub fn embed_corpus<'a, I>(
    paragraphs: I,
    provider: &dyn EmbeddingProvider,
    cache: &mut VectorCache,
    options: EmbedOptions,
) -> Result<EmbedStats>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut stats = EmbedStats::default();
    if cache.fingerprint() != provider.fingerprint() || cache.dim() != provider.dim() {
        stats.invalidated = !cache.is_empty();
        cache.reset(provider.fingerprint(), provider.dim());
    }

    let mut pending: Vec<EmbedRequest<'a>> = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for (para_id, text) in paragraphs {
        if text.trim().is_empty() {
            return Err(annotate(para_id, EmbeddingError::EmptyText));
        }
        if cache.contains(para_id) {
            stats.reused += 1;
        } else if queued.insert(para_id) {
            pending.push(EmbedRequest { para_id, text });
        }
    }

    let batch = options.batch_size.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
    let results: Vec<Vec<EmbeddingVector>> = pool.install(|| {
        pending
            .par_chunks(batch)
            .map(|chunk| embed_chunk(provider, chunk))
            .collect::<Result<_>>()
    })?;

    for (request, vector) in pending.iter().zip(results.into_iter().flatten()) {
        cache.insert(request.para_id, vector)?;
        stats.computed += 1;
    }
    Ok(stats)
}
