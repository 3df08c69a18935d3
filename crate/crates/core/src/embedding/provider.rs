//! External providers: pre-computed vector files and a sidecar HTTP encoder.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    read_vector_file, EmbedRequest, EmbeddingError, EmbeddingProvider, EmbeddingVector,
    Fingerprint, Result,
};

/// Serves vectors from a `PCVEC1` file produced by an external encoder.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    fingerprint: Fingerprint,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileProvider {
    pub fn open(path: &Path, dim: usize) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| {
            EmbeddingError::ProviderUnavailable(format!("{}: {e}", path.display()))
        })?;
        let contents = read_vector_file(BufReader::new(file))?;
        if contents.dim != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: contents.dim,
            });
        }
        Ok(Self {
            dim,
            fingerprint: Fingerprint::of(&format!(
                "kind=external_file;dim={dim};source={}",
                contents.fingerprint.to_hex()
            )),
            vectors: contents.records.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    fn embed_batch(&self, items: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingVector>> {
        items
            .iter()
            .map(|item| {
                self.vectors
                    .get(item.para_id)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::MissingVector(item.para_id.to_owned()))
            })
            .collect()
    }
}

#[derive(Debug, Serialize)]
struct EmbedBody<'a> {
    texts: Vec<&'a str>,
}

#[derive(Debug, Deserialize)]
struct EmbedReply {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

/// Client for a sidecar encoder speaking `POST /embed`
/// `{"texts": [...]}` -> `{"dim": n, "vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct ServiceProvider {
    endpoint: String,
    dim: usize,
    batch_size: usize,
    agent: ureq::Agent,
}

impl ServiceProvider {
    /// `url` is the service root; `/embed` is appended unless already present.
    pub fn new(url: &str, dim: usize, batch_size: usize) -> Self {
        let root = url.trim_end_matches('/');
        let endpoint = if root.ends_with("/embed") {
            root.to_owned()
        } else {
            format!("{root}/embed")
        };
        Self {
            endpoint,
            dim,
            batch_size: batch_size.max(1),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    fn post(&self, texts: Vec<&str>) -> Result<Vec<EmbeddingVector>> {
        let expected = texts.len();
        let unavailable = |e: ureq::Error| {
            EmbeddingError::ProviderUnavailable(format!("{}: {e}", self.endpoint))
        };
        let reply: EmbedReply = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedBody { texts })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        if reply.dim != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                got: reply.dim,
            });
        }
        if reply.vectors.len() != expected {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "service returned {} vectors for {expected} texts",
                reply.vectors.len()
            )));
        }
        reply
            .vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dim,
                        got: values.len(),
                    });
                }
                EmbeddingVector::new(values)
            })
            .collect()
    }
}

impl EmbeddingProvider for ServiceProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&format!(
            "kind=external_service;dim={};url={}",
            self.dim, self.endpoint
        ))
    }

    fn embed_batch(&self, items: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            out.extend(self.post(chunk.iter().map(|i| i.text).collect())?);
        }
        Ok(out)
    }
}
