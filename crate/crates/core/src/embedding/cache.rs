use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{
    read_vector_file, write_vector_file, EmbeddingError, EmbeddingVector, Fingerprint, Result,
    VectorLookup,
};

/// Paragraph vectors from a single provider, persisted as a `PCVEC1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    fingerprint: Fingerprint,
    dim: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl VectorCache {
    pub fn new(fingerprint: Fingerprint, dim: usize) -> Self {
        Self {
            fingerprint,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_vector_file(BufReader::new(fs::File::open(path)?))?;
        Ok(Self {
            fingerprint: file.fingerprint,
            dim: file.dim,
            entries: file.records.into_iter().collect(),
        })
    }

    /// Loads `path` if it exists and was written for the same provider,
    /// otherwise starts empty. The flag reports whether an existing file was
    /// discarded.
    pub fn load_or_new(path: &Path, fingerprint: Fingerprint, dim: usize) -> Result<(Self, bool)> {
        if !path.exists() {
            return Ok((Self::new(fingerprint, dim), false));
        }
        let cache = Self::load(path)?;
        if cache.fingerprint == fingerprint && cache.dim == dim {
            Ok((cache, false))
        } else {
            Ok((Self::new(fingerprint, dim), true))
        }
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("pcv.tmp");
        {
            let file = fs::File::create(&tmp)?;
            let mut writer = BufWriter::new(&file);
            write_vector_file(
                &mut writer,
                self.dim,
                self.fingerprint,
                self.entries.iter().map(|(k, v)| (k.as_str(), v)),
            )?;
            drop(writer);
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, para_id: &str) -> bool {
        self.entries.contains_key(para_id)
    }

    pub fn get(&self, para_id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(para_id)
    }

    pub fn insert(&mut self, para_id: &str, vector: EmbeddingVector) -> Result<()> {
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        self.entries.insert(para_id.to_owned(), vector);
        Ok(())
    }

    pub fn reset(&mut self, fingerprint: Fingerprint, dim: usize) {
        self.fingerprint = fingerprint;
        self.dim = dim;
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl VectorLookup for VectorCache {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, para_id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(para_id)
    }
}
