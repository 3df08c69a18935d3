#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use paracode_core::classifiers::ModelBundle;
use paracode_core::corpus::{load_documents_dir, read_labels_jsonl, read_role_map, Corpus, IngestConfig, Role};
use paracode_core::embedding::{embed_corpus, EmbedOptions, EmbeddingProvider, HashingEmbedder, VectorCache};
use paracode_core::service::{cmd_shortlist, cmd_train, PipelineConfig, ReviewStore};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini_corpus")
}

pub struct Trained {
    pub corpus: Corpus,
    pub vectors: VectorCache,
    pub bundle: ModelBundle,
    pub config: PipelineConfig,
}

/// Fixture corpus, hashed vectors and a bundle, built once per test binary.
pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = fixture_dir();
        let docs = load_documents_dir(&dir).unwrap();
        let labels = read_labels_jsonl(&dir.join("labels.jsonl")).unwrap();
        let mut corpus = Corpus::new();
        corpus.ingest_many(&docs, &labels, &IngestConfig::default()).unwrap();
        corpus.assign_roles(&read_role_map(&dir.join("roles.json")).unwrap()).unwrap();
        let provider = HashingEmbedder::new(1024, 42);
        let mut vectors = VectorCache::new(provider.fingerprint(), provider.dim());
        embed_corpus(
            corpus.paragraphs().iter().map(|p| (p.para_id.as_str(), p.text.as_str())),
            &provider,
            &mut vectors,
            EmbedOptions::default(),
        )
        .unwrap();
        let config = PipelineConfig::default();
        let bundle = cmd_train(&config, &corpus, &vectors, vectors.fingerprint()).unwrap().bundle;
        Trained {
            corpus,
            vectors,
            bundle,
            config,
        }
    })
}

/// A store holding one session over the holdout paragraphs.
pub fn store_with_session(dir: &std::path::Path) -> (ReviewStore, String) {
    let t = trained();
    let mut store = ReviewStore::open(dir).unwrap();
    let holdout = t.corpus.partition().get(Role::Holdout).to_vec();
    let outcome = cmd_shortlist(&t.config, &t.bundle, &holdout, &t.vectors, &mut store, None).unwrap();
    assert!(outcome.session.pc_items + outcome.session.ae_items > 0, "fixture shortlist is empty");
    (store, outcome.session.session_id)
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    /// Asserts the `{code, message}` error shape and returns the code.
    pub fn error_code(&self) -> String {
        let v = self.json();
        assert!(v["message"].is_string(), "{v}");
        assert_eq!(v.as_object().unwrap().len(), 2, "{v}");
        v["code"].as_str().unwrap().to_owned()
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(|b| Body::from(b.to_owned())).unwrap_or_else(Body::empty)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_owned());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub fn app(state: paracode_cli::AppState) -> Router {
    paracode_cli::router(Arc::new(state))
}
