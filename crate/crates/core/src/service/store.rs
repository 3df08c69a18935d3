//! Durable review sessions.
//!
//! Every mutation is one line in `journal.jsonl`, flushed to disk before the
//! call returns. `snapshot.json` is rewritten through a temporary file and a
//! rename, after which the journal starts over. Opening a store loads the
//! snapshot and replays journal events newer than it; a torn final line is an
//! unacknowledged write and is dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{Result, ServiceError};
use crate::corpus::{Corpus, CorpusError, Dimension, Label, Paragraph, Provenance, ProvenanceSet, Register};
use crate::ensemble::{PerKind, Threshold};

const JOURNAL: &str = "journal.jsonl";
const SNAPSHOT: &str = "snapshot.json";
const SNAPSHOT_VERSION: u32 = 1;
const DEFAULT_SNAPSHOT_EVERY: usize = 256;
pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 500;
const MAX_CODER_ID: usize = 128;

/// Places where a test can make the store fail as if the process died.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrashPoint {
    /// Before the journal line is written.
    BeforeAppend,
    /// After the line is durable, before the caller is told.
    AfterAppend,
    /// After the new snapshot is written to its temporary name.
    AfterSnapshotTmp,
    /// After the snapshot rename, before the journal is reset.
    AfterSnapshotRename,
}

/// One shortlisted (paragraph, dimension) pair with what a reviewer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionItem {
    pub para_id: String,
    pub dimension: Dimension,
    pub doc_id: String,
    pub party: String,
    pub year: i32,
    pub register: Register,
    pub text: String,
    pub votes: PerKind<bool>,
    pub positive_votes: u8,
    pub mean_score: f64,
    pub near_miss: bool,
}

/// Ensemble decisions for every paragraph the session was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeDecision {
    pub para_id: String,
    pub pc: bool,
    pub ae: bool,
}

impl ScopeDecision {
    fn get(&self, dimension: Dimension) -> bool {
        match dimension {
            Dimension::Pc => self.pc,
            Dimension::Ae => self.ae,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewSession {
    pub session_id: String,
    pub threshold: Threshold,
    pub items: Vec<SessionItem>,
    pub scope: Vec<ScopeDecision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub verdict_id: String,
    pub session_id: String,
    pub para_id: String,
    pub dimension: Dimension,
    pub human_decision: HumanDecision,
    pub coder_id: String,
    pub timestamp: DateTime<Utc>,
    /// Ensemble decision shown to the coder, as 0 or 1.
    pub model_decision_at_time: u8,
}

impl Verdict {
    /// The label the coder asserted.
    pub fn corrected_label(&self) -> bool {
        let model = self.model_decision_at_time == 1;
        match self.human_decision {
            HumanDecision::Accept => model,
            HumanDecision::Reject => !model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSubmission {
    pub para_id: String,
    pub dimension: Dimension,
    pub human_decision: HumanDecision,
    pub coder_id: String,
}

impl VerdictSubmission {
    pub fn from_json(body: &[u8]) -> Result<Self> {
        serde_json::from_slice(body).map_err(|e| ServiceError::MalformedSubmission(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ServiceError::MalformedSubmission(m.to_owned()));
        if self.coder_id.trim().is_empty() {
            return bad("coder_id is empty");
        }
        if self.coder_id.chars().count() > MAX_CODER_ID {
            return bad("coder_id is too long");
        }
        if self.coder_id.chars().any(char::is_control) || self.coder_id.trim() != self.coder_id {
            return bad("coder_id has control characters or surrounding whitespace");
        }
        if self.para_id.is_empty() {
            return bad("para_id is empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Bumped each time the shortlist is replaced. Cursors carry it.
    pub revision: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub threshold: Threshold,
    pub items: Vec<SessionItem>,
    pub scope: Vec<ScopeDecision>,
    /// At most one per (para_id, dimension, coder_id), oldest first.
    pub verdicts: Vec<Verdict>,
}

impl Session {
    fn item(&self, para_id: &str, dimension: Dimension) -> Option<&SessionItem> {
        self.items.iter().find(|i| i.para_id == para_id && i.dimension == dimension)
    }

    pub fn verdicts_for<'a>(&'a self, para_id: &'a str, dimension: Dimension) -> impl Iterator<Item = &'a Verdict> + 'a {
        self.verdicts.iter().filter(move |v| v.para_id == para_id && v.dimension == dimension)
    }

    /// Most recent verdict from any coder.
    pub fn latest_verdict(&self, para_id: &str, dimension: Dimension) -> Option<&Verdict> {
        self.verdicts.iter().rev().find(|v| v.para_id == para_id && v.dimension == dimension)
    }

    fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            revision: self.revision,
            threshold: self.threshold,
            created_at: self.created_at,
            updated_at: self.updated_at,
            pc_items: self.items.iter().filter(|i| i.dimension == Dimension::Pc).count(),
            ae_items: self.items.iter().filter(|i| i.dimension == Dimension::Ae).count(),
            scope: self.scope.len(),
            verdicts: self.verdicts.len(),
        }
    }

    fn record(&mut self, verdict: Verdict) {
        self.verdicts.retain(|v| {
            !(v.para_id == verdict.para_id && v.dimension == verdict.dimension && v.coder_id == verdict.coder_id)
        });
        self.updated_at = verdict.timestamp;
        self.verdicts.push(verdict);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub revision: u64,
    pub threshold: Threshold,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub pc_items: usize,
    pub ae_items: usize,
    pub scope: usize,
    pub verdicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageItem {
    #[serde(flatten)]
    pub item: SessionItem,
    /// Latest verdict from any coder.
    pub verdict: Option<Verdict>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistPage {
    pub session_id: String,
    pub revision: u64,
    pub dimension: Option<Dimension>,
    pub total: usize,
    pub items: Vec<PageItem>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionProgress {
    /// Shortlisted items with at least one verdict.
    pub reviewed: usize,
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub revision: u64,
    pub pc: DimensionProgress,
    pub ae: DimensionProgress,
}

impl Progress {
    pub fn get(&self, dimension: Dimension) -> DimensionProgress {
        match dimension {
            Dimension::Pc => self.pc,
            Dimension::Ae => self.ae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    threshold: Threshold,
    items: Vec<SessionItem>,
    scope: Vec<ScopeDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionOpened {
        seq: u64,
        at: DateTime<Utc>,
        session: SessionRecord,
    },
    VerdictRecorded {
        seq: u64,
        verdict: Verdict,
    },
}

impl Event {
    fn seq(&self) -> u64 {
        match self {
            Event::SessionOpened { seq, .. } | Event::VerdictRecorded { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    seq: u64,
    sessions: Vec<Session>,
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct ReviewStore {
    dir: PathBuf,
    sessions: BTreeMap<String, Session>,
    seq: u64,
    journal: File,
    since_snapshot: usize,
    snapshot_every: usize,
    crash: Option<CrashPoint>,
    poisoned: bool,
    clock: Clock,
}

impl fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReviewStore")
            .field("dir", &self.dir)
            .field("sessions", &self.sessions.len())
            .field("seq", &self.seq)
            .field("poisoned", &self.poisoned)
            .finish()
    }
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    #[cfg(unix)]
    {
        File::open(dir)?.sync_all()?;
    }
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}

fn corrupt(path: &Path, what: impl fmt::Display) -> ServiceError {
    ServiceError::CorruptStore(format!("{}: {what}", path.display()))
}

impl ReviewStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let snapshot_path = dir.join(SNAPSHOT);
        let _ = fs::remove_file(dir.join(format!("{SNAPSHOT}.tmp")));
        let _ = fs::remove_file(dir.join(format!("{JOURNAL}.tmp")));

        let (mut seq, mut sessions) = match fs::read(&snapshot_path) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| corrupt(&snapshot_path, e))?;
                if snap.version != SNAPSHOT_VERSION {
                    return Err(corrupt(&snapshot_path, format!("unsupported version {}", snap.version)));
                }
                let sessions = snap.sessions.into_iter().map(|s| (s.session_id.clone(), s)).collect();
                (snap.seq, sessions)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (0, BTreeMap::new()),
            Err(e) => return Err(e.into()),
        };

        let journal_path = dir.join(JOURNAL);
        let bytes = match fs::read(&journal_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let mut replayed = 0;
        for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let event: Event =
                serde_json::from_slice(line).map_err(|e| corrupt(&journal_path, format!("line {}: {e}", n + 1)))?;
            if event.seq() <= seq {
                continue;
            }
            if event.seq() != seq + 1 {
                return Err(corrupt(&journal_path, format!("line {}: expected event {}, got {}", n + 1, seq + 1, event.seq())));
            }
            seq = event.seq();
            apply(&mut sessions, event);
            replayed += 1;
        }
        if complete < bytes.len() {
            warn!("{}: dropping {} bytes of an unfinished write", journal_path.display(), bytes.len() - complete);
            let f = OpenOptions::new().write(true).open(&journal_path)?;
            f.set_len(complete as u64)?;
            f.sync_all()?;
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        sync_dir(dir)?;
        debug!("opened review store {} at event {seq}, {replayed} replayed", dir.display());
        Ok(Self {
            dir: dir.to_owned(),
            sessions,
            seq,
            journal,
            since_snapshot: replayed,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            crash: None,
            poisoned: false,
            clock: Box::new(Utc::now),
        })
    }

    /// Snapshot after this many journal events (0 disables automatic snapshots).
    pub fn with_snapshot_every(mut self, events: usize) -> Self {
        self.snapshot_every = events;
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Arms a one-shot failure. After it fires the store refuses all writes.
    pub fn inject_crash(&mut self, point: Option<CrashPoint>) {
        self.crash = point;
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn crash_at(&mut self, point: CrashPoint) -> Result<()> {
        if self.crash == Some(point) {
            self.crash = None;
            self.poisoned = true;
            return Err(ServiceError::InjectedCrash(point));
        }
        Ok(())
    }

    fn guard<T>(&mut self, r: io::Result<T>) -> Result<T> {
        r.map_err(|e| {
            self.poisoned = true;
            e.into()
        })
    }

    fn append(&mut self, event: Event) -> Result<()> {
        if self.poisoned {
            return Err(ServiceError::StorePoisoned);
        }
        self.crash_at(CrashPoint::BeforeAppend)?;
        let mut line = serde_json::to_vec(&event).expect("events serialize");
        line.push(b'\n');
        let written = self.journal.write_all(&line).and_then(|()| self.journal.sync_data());
        self.guard(written)?;
        self.crash_at(CrashPoint::AfterAppend)?;
        self.seq = event.seq();
        apply(&mut self.sessions, event);
        self.since_snapshot += 1;
        if self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the full state to the snapshot and starts an empty journal.
    pub fn snapshot(&mut self) -> Result<()> {
        if self.poisoned {
            return Err(ServiceError::StorePoisoned);
        }
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            seq: self.seq,
            sessions: self.sessions.values().cloned().collect(),
        };
        let bytes = serde_json::to_vec(&snap).expect("snapshot serializes");
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        let written = write_synced(&tmp, &bytes);
        self.guard(written)?;
        self.crash_at(CrashPoint::AfterSnapshotTmp)?;
        let renamed = fs::rename(&tmp, self.dir.join(SNAPSHOT)).and_then(|()| sync_dir(&self.dir));
        self.guard(renamed)?;
        self.crash_at(CrashPoint::AfterSnapshotRename)?;

        let journal_tmp = self.dir.join(format!("{JOURNAL}.tmp"));
        let journal_path = self.dir.join(JOURNAL);
        let rotated = write_synced(&journal_tmp, b"")
            .and_then(|()| fs::rename(&journal_tmp, &journal_path))
            .and_then(|()| sync_dir(&self.dir))
            .and_then(|()| OpenOptions::new().append(true).open(&journal_path));
        self.journal = self.guard(rotated)?;
        self.since_snapshot = 0;
        debug!("snapshot at event {}", self.seq);
        Ok(())
    }

    /// Opens a session, or replaces the shortlist of an existing one.
    pub fn create_session(&mut self, new: NewSession) -> Result<SessionSummary> {
        if new.session_id.is_empty() || !new.session_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(ServiceError::MalformedSubmission(format!("invalid session id {:?}", new.session_id)));
        }
        let seq = self.seq + 1;
        let event = Event::SessionOpened {
            seq,
            at: (self.clock)(),
            session: SessionRecord {
                session_id: new.session_id.clone(),
                threshold: new.threshold,
                items: new.items,
                scope: new.scope,
            },
        };
        self.append(event)?;
        Ok(self.sessions[&new.session_id].summary())
    }

    pub fn session(&self, session_id: &str) -> Result<&Session> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_owned()))
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        self.sessions.values().map(Session::summary).collect()
    }

    /// Items in shortlist order. The cursor from one page fetches the next;
    /// cursors stop working once the shortlist is replaced.
    pub fn page(
        &self,
        session_id: &str,
        dimension: Option<Dimension>,
        cursor: Option<&str>,
        limit: Option<usize>,
    ) -> Result<ShortlistPage> {
        let session = self.session(session_id)?;
        let limit = limit.unwrap_or(DEFAULT_PAGE_LIMIT).clamp(1, MAX_PAGE_LIMIT);
        let selected: Vec<&SessionItem> = session
            .items
            .iter()
            .filter(|i| dimension.is_none_or(|d| i.dimension == d))
            .collect();
        let offset = match cursor {
            None => 0,
            Some(c) => parse_cursor(c, session.revision, dimension, selected.len())?,
        };
        let end = (offset + limit).min(selected.len());
        let items = selected[offset..end]
            .iter()
            .map(|&i| {
                let verdicts: Vec<Verdict> = session.verdicts_for(&i.para_id, i.dimension).cloned().collect();
                PageItem {
                    item: i.clone(),
                    verdict: verdicts.last().cloned(),
                    verdicts,
                }
            })
            .collect();
        Ok(ShortlistPage {
            session_id: session.session_id.clone(),
            revision: session.revision,
            dimension,
            total: selected.len(),
            items,
            next_cursor: (end < selected.len()).then(|| make_cursor(session.revision, dimension, end)),
        })
    }

    /// Records a verdict. When this returns, the verdict is on disk.
    pub fn submit(&mut self, session_id: &str, submission: VerdictSubmission) -> Result<Verdict> {
        submission.validate()?;
        let session = self.session(session_id)?;
        let item = session
            .item(&submission.para_id, submission.dimension)
            .ok_or_else(|| ServiceError::UnknownParagraph {
                para_id: submission.para_id.clone(),
                dimension: submission.dimension,
            })?;
        let model_decision = item.positive_votes >= session.threshold.get();
        let seq = self.seq + 1;
        let verdict = Verdict {
            verdict_id: format!("v{seq:010}"),
            session_id: session.session_id.clone(),
            para_id: submission.para_id,
            dimension: submission.dimension,
            human_decision: submission.human_decision,
            coder_id: submission.coder_id,
            timestamp: (self.clock)(),
            model_decision_at_time: u8::from(model_decision),
        };
        self.append(Event::VerdictRecorded {
            seq,
            verdict: verdict.clone(),
        })?;
        Ok(verdict)
    }

    pub fn progress(&self, session_id: &str) -> Result<Progress> {
        let session = self.session(session_id)?;
        let count = |d: Dimension| {
            let mut p = DimensionProgress::default();
            for i in session.items.iter().filter(|i| i.dimension == d) {
                p.total += 1;
                if let Some(v) = session.latest_verdict(&i.para_id, d) {
                    p.reviewed += 1;
                    match v.human_decision {
                        HumanDecision::Accept => p.accepted += 1,
                        HumanDecision::Reject => p.rejected += 1,
                    }
                }
            }
            p
        };
        Ok(Progress {
            session_id: session.session_id.clone(),
            revision: session.revision,
            pc: count(Dimension::Pc),
            ae: count(Dimension::Ae),
        })
    }

    /// Corrected labels for every paragraph the session covers, in corpus
    /// order. Per dimension, a human verdict wins over a gold label, which
    /// wins over the ensemble decision.
    pub fn export(&self, session_id: &str, corpus: &Corpus) -> Result<Vec<Paragraph>> {
        let session = self.session(session_id)?;
        let scope: BTreeMap<&str, &ScopeDecision> = session.scope.iter().map(|s| (s.para_id.as_str(), s)).collect();
        if let Some(missing) = scope.keys().find(|id| corpus.paragraph(id).is_none()) {
            return Err(CorpusError::InvalidCorpus(format!("session paragraph {missing:?} is not in the corpus")).into());
        }
        let mut out = Vec::with_capacity(scope.len());
        for p in corpus.paragraphs() {
            let Some(decided) = scope.get(p.para_id.as_str()) else {
                continue;
            };
            let mut record = p.clone();
            let mut provenance = [Provenance::ModelUnverified; 2];
            for (slot, d) in [Dimension::Pc, Dimension::Ae].into_iter().enumerate() {
                let (label, source) = match (session.latest_verdict(&p.para_id, d), p.labels.get(d)) {
                    (Some(v), _) => (Label::from_bool(v.corrected_label()), Provenance::HumanVerified),
                    (None, gold) if gold.is_labeled() => (gold, Provenance::Gold),
                    (None, _) => (Label::from_bool(decided.get(d)), Provenance::ModelUnverified),
                };
                record.labels.set(d, label);
                provenance[slot] = source;
            }
            record.provenance = Some(ProvenanceSet {
                pc: provenance[0],
                ae: provenance[1],
            });
            out.push(record);
        }
        Ok(out)
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn apply(sessions: &mut BTreeMap<String, Session>, event: Event) {
    match event {
        Event::SessionOpened { at, session, .. } => match sessions.get_mut(&session.session_id) {
            Some(existing) => {
                existing.revision += 1;
                existing.updated_at = at;
                existing.threshold = session.threshold;
                existing.items = session.items;
                existing.scope = session.scope;
            }
            None => {
                sessions.insert(
                    session.session_id.clone(),
                    Session {
                        session_id: session.session_id,
                        revision: 1,
                        created_at: at,
                        updated_at: at,
                        threshold: session.threshold,
                        items: session.items,
                        scope: session.scope,
                        verdicts: Vec::new(),
                    },
                );
            }
        },
        Event::VerdictRecorded { verdict, .. } => {
            if let Some(s) = sessions.get_mut(&verdict.session_id) {
                s.record(verdict);
            }
        }
    }
}

fn dimension_tag(d: Option<Dimension>) -> &'static str {
    d.map_or("all", Dimension::as_str)
}

fn make_cursor(revision: u64, dimension: Option<Dimension>, offset: usize) -> String {
    format!("r{revision}.{}.{offset}", dimension_tag(dimension))
}

fn parse_cursor(cursor: &str, revision: u64, dimension: Option<Dimension>, len: usize) -> Result<usize> {
    let bad = || ServiceError::BadCursor(cursor.to_owned());
    let mut parts = cursor.split('.');
    let (Some(rev), Some(dim), Some(offset), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let rev: u64 = rev.strip_prefix('r').and_then(|r| r.parse().ok()).ok_or_else(bad)?;
    let offset: usize = offset.parse().map_err(|_| bad())?;
    if rev != revision || dim != dimension_tag(dimension) || offset == 0 || offset > len {
        return Err(bad());
    }
    Ok(offset)
}
