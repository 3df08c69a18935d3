//! `paracode` verbs. Paths not given on the command line fall back to the
//! `[paths]` table of the config file, resolved against the file's directory.

use std::fs;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use paracode_core::classifiers::{read_bundle, write_bundle, ModelBundle};
use paracode_core::corpus::{
    load_documents_dir, read_corpus_jsonl, read_labels_jsonl, read_role_map, write_corpus_jsonl, Corpus, Paragraph,
    Role,
};
use paracode_core::embedding::{embed_corpus, EmbedOptions, ProviderSpec, VectorCache};
use paracode_core::ensemble::{classify_corpus, read_decisions_jsonl, write_decisions_jsonl};
use paracode_core::evaluation::emit_report;
use paracode_core::service::{
    check_fingerprint, cmd_evaluate, cmd_shortlist, cmd_train, evaluate_decisions, PipelineConfig, ReviewStore,
};
use paracode_core::{ReportFormat, Threshold};

use crate::api::{router, AppState, Evaluator, TOKEN_ENV};

#[derive(Debug, Parser)]
#[command(name = "paracode", version, about = "Paragraph-level populism coding with human review")]
pub struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, env = "PARACODE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a directory of documents and join gold labels.
    Ingest(IngestArgs),
    /// Assign documents to train/test/holdout.
    Roles(RolesArgs),
    /// Compute paragraph vectors, reusing any cached ones.
    Embed(EmbedArgs),
    /// Fit the five learners for both dimensions.
    Train(TrainArgs),
    /// Score decisions or a model bundle against gold labels.
    #[command(alias = "eval")]
    Evaluate(EvaluateArgs),
    /// Write ensemble decisions as JSON lines.
    Predict(PredictArgs),
    /// Build a review shortlist and open a session for it.
    Shortlist(ShortlistArgs),
    /// Run the review HTTP API.
    Serve(ServeArgs),
    /// Write the corrected corpus of a review session.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `<doc_id>.txt` files, each with a `<doc_id>.meta.json`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Gold labels, one JSON record per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Role map to apply right away.
    #[arg(long)]
    pub roles: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolesArgs {
    /// `{"doc_id": "train" | "test" | "holdout"}`.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Defaults to rewriting the corpus in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `hashing[:<n>[:<seed>]]`, `file:<path>` or `http:<url>`. Overrides the config.
    #[arg(long)]
    pub provider: Option<ProviderSpec>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub role: Role,
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
    /// Score a decisions file instead of running the bundle.
    #[arg(long, conflicts_with_all = ["bundle", "vectors"])]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<i64>,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Only paragraphs of this role; all paragraphs by default.
    #[arg(long)]
    pub role: Option<Role>,
    #[arg(long)]
    pub threshold: Option<i64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShortlistArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Only paragraphs of this role; all paragraphs by default.
    #[arg(long)]
    pub role: Option<Role>,
    /// Reuse a session id; derived from the inputs otherwise.
    #[arg(long)]
    pub session: Option<String>,
    /// Also queue paragraphs one vote short of the threshold.
    #[arg(long)]
    pub near_miss: bool,
    #[arg(long)]
    pub threshold: Option<i64>,
    /// Also write the shortlist as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// With --vectors, enables /api/evaluate.
    #[arg(long, requires = "vectors")]
    pub bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub session: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Loaded config plus the directory its relative paths are resolved against.
struct Workspace {
    config: PipelineConfig,
    base: PathBuf,
}

impl Workspace {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(path) => {
                let config = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok(Self { config, base })
            }
            None => Ok(Self {
                config: PipelineConfig::default(),
                base: PathBuf::new(),
            }),
        }
    }

    fn path(&self, given: Option<&PathBuf>, configured: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
        if let Some(p) = given {
            return Ok(p.clone());
        }
        match configured {
            Some(p) => Ok(self.base.join(p)),
            None => bail!("--{flag} not given and the config has no paths.{flag}"),
        }
    }

    fn corpus(&self, given: Option<&PathBuf>) -> Result<PathBuf> {
        self.path(given, &self.config.paths.corpus, "corpus")
    }

    fn vectors(&self, given: Option<&PathBuf>) -> Result<PathBuf> {
        self.path(given, &self.config.paths.vectors, "vectors")
    }

    fn bundle(&self, given: Option<&PathBuf>) -> Result<PathBuf> {
        self.path(given, &self.config.paths.bundle, "bundle")
    }

    fn store(&self, given: Option<&PathBuf>) -> Result<PathBuf> {
        self.path(given, &self.config.paths.store, "store")
    }

    fn set_threshold(&mut self, threshold: Option<i64>) -> Result<()> {
        if let Some(t) = threshold {
            self.config.threshold = Threshold::new(t)?;
        }
        Ok(())
    }
}

/// Writes next to `path` and renames, so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_vectors(path: &Path) -> Result<VectorCache> {
    VectorCache::load(path).with_context(|| format!("reading vectors {}", path.display()))
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let file = fs::File::open(path).with_context(|| format!("opening bundle {}", path.display()))?;
    read_bundle(BufReader::new(file)).with_context(|| format!("reading bundle {}", path.display()))
}

fn save_corpus(path: &Path, paragraphs: &[Paragraph]) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus_jsonl(&mut buf, paragraphs)?;
    write_atomic(path, &buf)
}

fn select(corpus: &Corpus, role: Option<Role>) -> Vec<&Paragraph> {
    match role {
        Some(role) => corpus.partition().get(role).to_vec(),
        None => corpus.paragraphs().iter().collect(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut ctx = Workspace::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Roles(a) => roles(&ctx, a),
        Command::Embed(a) => embed(&ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Evaluate(a) => evaluate(&mut ctx, a),
        Command::Predict(a) => predict(&mut ctx, a),
        Command::Shortlist(a) => shortlist(&mut ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Export(a) => export(&ctx, a),
    }
}

fn ingest(ctx: &Workspace, args: IngestArgs) -> Result<()> {
    let out = ctx.corpus(args.out.as_ref())?;
    let docs = load_documents_dir(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let labels = match &args.labels {
        Some(path) => read_labels_jsonl(path).with_context(|| format!("reading labels {}", path.display()))?,
        None => Vec::new(),
    };
    let mut corpus = Corpus::new();
    let (reports, orphans) = corpus.ingest_many(&docs, &labels, &ctx.config.ingest)?;
    for r in &reports {
        info!("{}: {} paragraphs, {} labeled", r.doc_id, r.paragraphs, r.labeled);
        for u in &r.unmatched_labels {
            warn!("{}: label for paragraph {} matches no paragraph", r.doc_id, u.index);
        }
    }
    if !orphans.is_empty() {
        warn!("{} label records name documents that were not ingested", orphans.len());
    }
    if let Some(path) = &args.roles {
        corpus.assign_roles(&read_role_map(path)?)?;
    }
    save_corpus(&out, corpus.paragraphs())?;
    let c = corpus.partition().counts();
    println!(
        "{} documents, {} paragraphs (train {}, test {}, holdout {}, unassigned {}) -> {}",
        reports.len(),
        corpus.len(),
        c.train,
        c.test,
        c.holdout,
        c.unassigned,
        out.display()
    );
    Ok(())
}

fn roles(ctx: &Workspace, args: RolesArgs) -> Result<()> {
    let input = ctx.corpus(args.corpus.as_ref())?;
    let out = args.out.clone().unwrap_or_else(|| input.clone());
    let mut corpus = load_corpus(&input)?;
    let c = corpus.assign_roles(&read_role_map(&args.map)?)?;
    save_corpus(&out, corpus.paragraphs())?;
    println!(
        "train {}, test {}, holdout {}, unassigned {} -> {}",
        c.train,
        c.test,
        c.holdout,
        c.unassigned,
        out.display()
    );
    Ok(())
}

fn embed(ctx: &Workspace, args: EmbedArgs) -> Result<()> {
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let out = ctx.vectors(args.out.as_ref())?;
    let spec = args.provider.unwrap_or_else(|| ctx.config.provider.clone());
    let provider = spec.open()?;
    let (mut cache, discarded) = VectorCache::load_or_new(&out, provider.fingerprint(), provider.dim())?;
    if discarded {
        warn!("{} was written by another provider; recomputing", out.display());
    }
    let stats = embed_corpus(
        corpus.paragraphs().iter().map(|p| (p.para_id.as_str(), p.text.as_str())),
        provider.as_ref(),
        &mut cache,
        EmbedOptions::from(ctx.config.embed),
    )?;
    cache.save(&out)?;
    println!(
        "{} computed, {} reused, dim {}, provider {} -> {}",
        stats.computed,
        stats.reused,
        cache.dim(),
        cache.fingerprint().to_hex(),
        out.display()
    );
    Ok(())
}

fn train(ctx: &mut Workspace, args: TrainArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        ctx.config.seed = seed;
    }
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let vectors = load_vectors(&ctx.vectors(args.vectors.as_ref())?)?;
    let out = ctx.bundle(args.out.as_ref())?;
    let outcome = cmd_train(&ctx.config, &corpus, &vectors, vectors.fingerprint())?;
    let mut buf = Vec::new();
    write_bundle(&mut buf, &outcome.bundle)?;
    write_atomic(&out, &buf)?;
    for f in &outcome.fits {
        println!(
            "{} {:<6} n={} positive={} objective={} iterations={} converged={} {:.2}s",
            f.dimension,
            f.kind,
            f.n_train,
            f.n_positive,
            f.objective.map_or("-".to_owned(), |o| format!("{o:.6}")),
            f.iterations,
            f.converged,
            f.duration.as_secs_f64()
        );
    }
    println!("{} models -> {}", outcome.fits.len(), out.display());
    Ok(())
}

fn evaluate(ctx: &mut Workspace, args: EvaluateArgs) -> Result<()> {
    ctx.set_threshold(args.threshold)?;
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let report = match &args.decisions {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let decisions = read_decisions_jsonl(BufReader::new(file))?;
            evaluate_decisions(&corpus, args.role, &decisions)?
        }
        None => {
            let bundle = load_bundle(&ctx.bundle(args.bundle.as_ref())?)?;
            let vectors = load_vectors(&ctx.vectors(args.vectors.as_ref())?)?;
            check_fingerprint(&bundle, vectors.fingerprint())?;
            cmd_evaluate(&ctx.config, &bundle, &corpus, &vectors, args.role)?
        }
    };
    let rendered = emit_report(&report, args.format);
    match &args.out {
        Some(path) => write_atomic(path, rendered.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(rendered.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn predict(ctx: &mut Workspace, args: PredictArgs) -> Result<()> {
    ctx.set_threshold(args.threshold)?;
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let vectors = load_vectors(&ctx.vectors(args.vectors.as_ref())?)?;
    let bundle = load_bundle(&ctx.bundle(args.bundle.as_ref())?)?;
    check_fingerprint(&bundle, vectors.fingerprint())?;
    let ids: Vec<&str> = select(&corpus, args.role).iter().map(|p| p.para_id.as_str()).collect();
    let classified = classify_corpus(&ids, &vectors, &bundle, ctx.config.threshold)?;
    let mut buf = Vec::new();
    write_decisions_jsonl(&mut buf, &classified)?;
    write_atomic(&args.out, &buf)?;
    let positive = classified.iter().filter(|c| c.decision.decision).count();
    println!(
        "{} decisions for {} paragraphs, {} positive -> {}",
        classified.len(),
        ids.len(),
        positive,
        args.out.display()
    );
    Ok(())
}

fn shortlist(ctx: &mut Workspace, args: ShortlistArgs) -> Result<()> {
    ctx.set_threshold(args.threshold)?;
    if args.near_miss {
        ctx.config.shortlist.include_near_miss = true;
    }
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let vectors = load_vectors(&ctx.vectors(args.vectors.as_ref())?)?;
    let bundle = load_bundle(&ctx.bundle(args.bundle.as_ref())?)?;
    check_fingerprint(&bundle, vectors.fingerprint())?;
    let mut store = ReviewStore::open(&ctx.store(args.store.as_ref())?)?;
    let paragraphs = select(&corpus, args.role);
    let outcome = cmd_shortlist(
        &ctx.config,
        &bundle,
        &paragraphs,
        &vectors,
        &mut store,
        args.session.as_deref(),
    )?;
    if let Some(path) = &args.out {
        let mut buf = serde_json::to_vec_pretty(&outcome.shortlist)?;
        buf.push(b'\n');
        write_atomic(path, &buf)?;
    }
    let s = &outcome.session;
    println!(
        "session {} revision {}: {} pc, {} ae to review",
        s.session_id, s.revision, s.pc_items, s.ae_items
    );
    Ok(())
}

fn serve(ctx: &Workspace, args: ServeArgs) -> Result<()> {
    let store = ReviewStore::open(&ctx.store(args.store.as_ref())?)?;
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        if !args.bind.ip().is_loopback() {
            bail!("refusing to serve on {} without {TOKEN_ENV}", args.bind);
        }
        warn!("{TOKEN_ENV} is not set; the API is open to local clients");
    }
    let mut state = AppState::new(store, corpus).with_token(token);
    if let (Some(bundle), Some(vectors)) = (&args.bundle, &args.vectors) {
        let bundle = load_bundle(bundle)?;
        let vectors = load_vectors(vectors)?;
        check_fingerprint(&bundle, vectors.fingerprint())?;
        state = state.with_evaluator(Evaluator {
            config: ctx.config.clone(),
            bundle,
            vectors,
        });
    }
    let app = router(Arc::new(state));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        let addr = listener.local_addr()?;
        info!("review API on http://{addr}/api");
        // Scripts and tests read the bound address from this line.
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn export(ctx: &Workspace, args: ExportArgs) -> Result<()> {
    let store = ReviewStore::open(&ctx.store(args.store.as_ref())?)?;
    let corpus = load_corpus(&ctx.corpus(args.corpus.as_ref())?)?;
    let paragraphs = store.export(&args.session, &corpus)?;
    save_corpus(&args.out, &paragraphs)?;
    println!("{} paragraphs -> {}", paragraphs.len(), args.out.display());
    Ok(())
}
