//! File formats: document directories, label and corpus JSON-lines, role maps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, LabelRecord, Paragraph, Register, Result, Role};

/// Sidecar metadata stored next to each document as `NAME.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentMeta {
    /// Defaults to the file stem.
    #[serde(default)]
    pub doc_id: Option<String>,
    pub party: String,
    pub year: i32,
    #[serde(default)]
    pub register: Register,
    #[serde(default = "super::default_language")]
    pub source_language: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads every `NAME.txt` in `dir` together with its `NAME.meta.json`,
/// sorted by file name.
pub fn load_documents_dir(dir: &Path) -> Result<Vec<Document>> {
    let mut texts: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    texts.sort();

    let mut documents = Vec::with_capacity(texts.len());
    for text_path in texts {
        let stem = text_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        let meta_path = text_path.with_file_name(format!("{stem}.meta.json"));
        let meta_raw = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: DocumentMeta =
            serde_json::from_str(&meta_raw).map_err(|source| CorpusError::Json {
                path: meta_path.display().to_string(),
                line: source.line(),
                source,
            })?;
        let raw_text = fs::read_to_string(&text_path).map_err(io_err(&text_path))?;
        documents.push(Document {
            doc_id: meta.doc_id.unwrap_or(stem),
            party: meta.party,
            year: meta.year,
            register: meta.register,
            source_language: meta.source_language,
            raw_text,
        });
    }
    Ok(documents)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: n + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_labels_jsonl(path: &Path) -> Result<Vec<LabelRecord>> {
    read_jsonl(path)
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    Corpus::from_paragraphs(read_jsonl::<Paragraph>(path)?)
}

/// Writes one paragraph per line, in the given order.
pub fn write_corpus_jsonl<'a, W, I>(mut writer: W, paragraphs: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Paragraph>,
{
    for p in paragraphs {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Reads `{"doc_id": "train" | "test" | "holdout", ...}`.
pub fn read_role_map(path: &Path) -> Result<BTreeMap<String, Role>> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|source| CorpusError::Json {
        path: path.display().to_string(),
        line: source.line(),
        source,
    })
}
