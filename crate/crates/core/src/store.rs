//! Embedded file-backed store for documents, merged requirements, trace links
//! and review decisions.
//!
//! A store is a directory holding `events.jsonl`, an append-only log of
//! JSON events replayed on open, and `audit.log`, one text line per review
//! decision. Each mutation is a single appended line, so a crash can at worst
//! leave a truncated final line, which replay discards. [`Store::compact`]
//! rewrites the log as a snapshot.
//!
//! The store is single-writer: mutations take `&mut self`, and callers
//! sharing a store across tasks wrap it in a lock.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::MergedRequirement;
use crate::ingest::{DocId, Document};
use crate::taxonomy::PegsCategory;

pub const LOG_FILE: &str = "events.jsonl";
pub const AUDIT_FILE: &str = "audit.log";
pub const DEFAULT_COMPACT_EVERY: usize = 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store not found at {0}")]
    Missing(PathBuf),
    #[error("store I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("run {0} already persisted")]
    DuplicateRun(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("requirement {req_id} traces to unknown section {section_label:?} of {doc_id}")]
    OrphanTrace {
        req_id: String,
        doc_id: String,
        section_label: String,
    },
    #[error("duplicate requirement id {0}")]
    DuplicateRequirement(String),
    #[error("unknown requirement {0}")]
    UnknownRequirement(String),
    #[error("requirement {req_id} is {from} and cannot be decided")]
    InvalidTransition { req_id: String, from: ReviewStatus },
    #[error("export failed: {0}")]
    Export(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    AutoAccepted,
    PendingReview,
    Accepted,
    Rejected,
}

impl ReviewStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewStatus::AutoAccepted => "auto_accepted",
            ReviewStatus::PendingReview => "pending_review",
            ReviewStatus::Accepted => "accepted",
            ReviewStatus::Rejected => "rejected",
        }
    }

    /// Included in the final export.
    pub fn is_final(self) -> bool {
        matches!(self, ReviewStatus::AutoAccepted | ReviewStatus::Accepted)
    }
}

impl fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "auto_accepted" | "auto" => Ok(ReviewStatus::AutoAccepted),
            "pending_review" | "pending" => Ok(ReviewStatus::PendingReview),
            "accepted" => Ok(ReviewStatus::Accepted),
            "rejected" => Ok(ReviewStatus::Rejected),
            other => Err(format!("unknown review state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    fn target(self) -> ReviewStatus {
        match self {
            Decision::Accept => ReviewStatus::Accepted,
            Decision::Reject => ReviewStatus::Rejected,
        }
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accept" | "accepted" => Ok(Decision::Accept),
            "reject" | "rejected" => Ok(Decision::Reject),
            other => Err(format!("decision must be accept or reject, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewState {
    pub status: ReviewStatus,
    pub reviewer: Option<String>,
    pub decided_at: DateTime<Utc>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLink {
    pub req_id: String,
    pub doc_id: DocId,
    pub section_label: String,
    pub page: u32,
    pub pegs: PegsCategory,
    pub confidence: f64,
    pub downstream_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRequirement {
    pub run_id: String,
    pub requirement: MergedRequirement,
    pub link: TraceLink,
    pub review: ReviewState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub doc_id: DocId,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub meta: RunMeta,
    pub requirements: Vec<StoredRequirement>,
}

/// Execution statistics recorded with a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: Option<String>,
    pub prompts: usize,
    pub failed_prompts: usize,
    pub cost_usd: f64,
    pub wall_ms: u64,
}

impl RunEntry {
    pub fn count_by_status(&self, status: ReviewStatus) -> usize {
        self.requirements
            .iter()
            .filter(|r| r.review.status == status)
            .count()
    }
}

/// Source location and text of a requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBack {
    pub req_id: String,
    pub doc_id: DocId,
    pub section_label: String,
    pub page: u32,
    pub excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Jsonl => "application/x-ndjson",
            ExportFormat::Csv => "text/csv",
        }
    }
}

/// One exported requirement. Ground-truth files use the same field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub req_id: String,
    pub text: String,
    #[serde(rename = "type")]
    pub req_type: String,
    pub pegs: String,
    pub priority: String,
    pub category: String,
    pub confidence: f64,
    pub state: String,
    pub doc_id: String,
    pub section: String,
    pub page: u32,
}

impl From<&StoredRequirement> for ExportRecord {
    fn from(r: &StoredRequirement) -> Self {
        let m = &r.requirement;
        ExportRecord {
            req_id: m.req_id.clone(),
            text: m.text.clone(),
            req_type: m.req_type.as_str().to_string(),
            pegs: m.pegs.name().to_string(),
            priority: m.priority.as_str().to_string(),
            category: m.category_label.clone(),
            confidence: m.confidence,
            state: r.review.status.as_str().to_string(),
            doc_id: r.link.doc_id.0.clone(),
            section: r.link.section_label.clone(),
            page: r.link.page,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequirementFilter {
    pub run_id: Option<String>,
    pub status: Option<ReviewStatus>,
    pub pegs: Option<PegsCategory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Document {
        document: Document,
    },
    Run {
        run: RunEntry,
    },
    Decision {
        req_id: String,
        review: ReviewState,
    },
    Downstream {
        req_id: String,
        downstream_ids: Vec<String>,
    },
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

pub struct Store {
    dir: PathBuf,
    documents: BTreeMap<String, Document>,
    runs: BTreeMap<String, RunEntry>,
    req_index: HashMap<String, (String, usize)>,
    clock: Clock,
    appended: usize,
    compact_every: Option<usize>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("documents", &self.documents.len())
            .field("runs", &self.runs.len())
            .finish()
    }
}

impl Store {
    /// Open an existing store. A missing directory or log is an error.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let log = dir.join(LOG_FILE);
        if !log.is_file() {
            return Err(StoreError::Missing(dir));
        }
        let mut store = Self::empty(dir);
        store.replay(&log)?;
        Ok(store)
    }

    /// Open the store at `dir`, creating an empty one if none exists.
    pub fn open_or_create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let log = dir.join(LOG_FILE);
        if !log.exists() {
            File::create(&log)?.sync_all()?;
        }
        Self::open(dir)
    }

    fn empty(dir: PathBuf) -> Self {
        Self {
            dir,
            documents: BTreeMap::new(),
            runs: BTreeMap::new(),
            req_index: HashMap::new(),
            clock: system_clock(),
            appended: 0,
            compact_every: Some(DEFAULT_COMPACT_EVERY),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Compact automatically after this many appended events (`None` never).
    pub fn with_compaction(mut self, every: Option<usize>) -> Self {
        self.compact_every = every;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join(AUDIT_FILE)
    }

    fn ensure_present(&self) -> Result<()> {
        if self.log_path().is_file() {
            Ok(())
        } else {
            Err(StoreError::Missing(self.dir.clone()))
        }
    }

    fn replay(&mut self, log: &Path) -> Result<()> {
        let reader = BufReader::new(File::open(log)?);
        let mut lines = reader.lines().enumerate().peekable();
        while let Some((i, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(&line) {
                Ok(event) => self.apply(event),
                // A torn final write from an interrupted process.
                Err(_) if lines.peek().is_none() => break,
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Document { document } => {
                self.documents.insert(document.doc_id.0.clone(), document);
            }
            Event::Run { run } => {
                for (i, r) in run.requirements.iter().enumerate() {
                    self.req_index
                        .insert(r.requirement.req_id.clone(), (run.run_id.clone(), i));
                }
                self.runs.insert(run.run_id.clone(), run);
            }
            Event::Decision { req_id, review } => {
                if let Some(r) = self.locate_mut(&req_id) {
                    r.review = review;
                }
            }
            Event::Downstream {
                req_id,
                downstream_ids,
            } => {
                if let Some(r) = self.locate_mut(&req_id) {
                    for id in downstream_ids {
                        if !r.link.downstream_ids.contains(&id) {
                            r.link.downstream_ids.push(id);
                        }
                    }
                }
            }
        }
    }

    fn locate(&self, req_id: &str) -> Option<&StoredRequirement> {
        let (run, i) = self.req_index.get(req_id)?;
        self.runs.get(run)?.requirements.get(*i)
    }

    fn locate_mut(&mut self, req_id: &str) -> Option<&mut StoredRequirement> {
        let (run, i) = self.req_index.get(req_id)?;
        self.runs.get_mut(run)?.requirements.get_mut(*i)
    }

    fn append(&mut self, event: &Event) -> Result<()> {
        let log = self.log_path();
        let mut file = OpenOptions::new().append(true).open(&log).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                StoreError::Missing(self.dir.clone())
            } else {
                StoreError::Io(e)
            }
        })?;
        let mut line = serde_json::to_string(event).map_err(io::Error::other)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        self.appended += 1;
        if self.compact_every.is_some_and(|n| self.appended >= n) {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrite the log as one event per document and run, folding in all
    /// decisions and downstream links.
    pub fn compact(&mut self) -> Result<()> {
        self.ensure_present()?;
        let tmp = self.dir.join(format!("{LOG_FILE}.tmp"));
        {
            let mut out = io::BufWriter::new(File::create(&tmp)?);
            for document in self.documents.values() {
                let e = Event::Document {
                    document: document.clone(),
                };
                serde_json::to_writer(&mut out, &e).map_err(io::Error::other)?;
                out.write_all(b"\n")?;
            }
            for run in self.runs.values() {
                let e = Event::Run { run: run.clone() };
                serde_json::to_writer(&mut out, &e).map_err(io::Error::other)?;
                out.write_all(b"\n")?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, self.log_path())?;
        self.appended = 0;
        Ok(())
    }

    /// Store a document. Re-storing a document with a known id is a no-op.
    pub fn put_document(&mut self, document: &Document) -> Result<DocId> {
        self.ensure_present()?;
        if !self.documents.contains_key(document.doc_id.as_str()) {
            let event = Event::Document {
                document: document.clone(),
            };
            self.append(&event)?;
            self.apply(event);
        }
        Ok(document.doc_id.clone())
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    /// Next unused sequential run id.
    pub fn next_run_id(&self) -> String {
        let mut n = self.runs.len() + 1;
        loop {
            let id = format!("run-{n:04}");
            if !self.runs.contains_key(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Persist a run's merged requirements with trace links and initial
    /// review states. Nothing is written unless every trace resolves.
    pub fn persist_run(
        &mut self,
        run_id: &str,
        doc_id: &DocId,
        merged: &[MergedRequirement],
    ) -> Result<String> {
        self.persist_run_with_meta(run_id, doc_id, merged, RunMeta::default())
    }

    pub fn persist_run_with_meta(
        &mut self,
        run_id: &str,
        doc_id: &DocId,
        merged: &[MergedRequirement],
        meta: RunMeta,
    ) -> Result<String> {
        self.ensure_present()?;
        if self.runs.contains_key(run_id) {
            return Err(StoreError::DuplicateRun(run_id.to_string()));
        }
        let document = self
            .documents
            .get(doc_id.as_str())
            .ok_or_else(|| StoreError::UnknownDocument(doc_id.0.clone()))?;
        let now = (self.clock)();
        let mut seen = std::collections::HashSet::new();
        let mut requirements = Vec::with_capacity(merged.len());
        for m in merged {
            let orphan = || StoreError::OrphanTrace {
                req_id: m.req_id.clone(),
                doc_id: m.trace.doc_id.0.clone(),
                section_label: m.trace.section_label.clone(),
            };
            if m.trace.doc_id != *doc_id {
                return Err(orphan());
            }
            document
                .section(&m.trace.section_label)
                .ok_or_else(orphan)?;
            if !seen.insert(m.req_id.as_str()) || self.req_index.contains_key(&m.req_id) {
                return Err(StoreError::DuplicateRequirement(m.req_id.clone()));
            }
            requirements.push(StoredRequirement {
                run_id: run_id.to_string(),
                requirement: m.clone(),
                link: TraceLink {
                    req_id: m.req_id.clone(),
                    doc_id: doc_id.clone(),
                    section_label: m.trace.section_label.clone(),
                    page: m.trace.page,
                    pegs: m.pegs,
                    confidence: m.confidence,
                    downstream_ids: Vec::new(),
                },
                review: ReviewState {
                    status: if m.flagged_for_review {
                        ReviewStatus::PendingReview
                    } else {
                        ReviewStatus::AutoAccepted
                    },
                    reviewer: None,
                    decided_at: now,
                    note: None,
                },
            });
        }
        let event = Event::Run {
            run: RunEntry {
                run_id: run_id.to_string(),
                doc_id: doc_id.clone(),
                created_at: now,
                meta,
                requirements,
            },
        };
        self.append(&event)?;
        self.apply(event);
        Ok(run_id.to_string())
    }

    pub fn run(&self, run_id: &str) -> Result<&RunEntry> {
        self.runs
            .get(run_id)
            .ok_or_else(|| StoreError::UnknownRun(run_id.to_string()))
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.values()
    }

    pub fn requirement(&self, req_id: &str) -> Result<&StoredRequirement> {
        self.locate(req_id)
            .ok_or_else(|| StoreError::UnknownRequirement(req_id.to_string()))
    }

    /// Requirements matching `filter`, ordered by run id, then PEGS
    /// category, then requirement id.
    pub fn requirements(&self, filter: &RequirementFilter) -> Vec<&StoredRequirement> {
        let mut out: Vec<&StoredRequirement> = self
            .runs
            .values()
            .filter(|run| filter.run_id.as_ref().is_none_or(|id| *id == run.run_id))
            .flat_map(|run| run.requirements.iter())
            .filter(|r| filter.status.is_none_or(|s| s == r.review.status))
            .filter(|r| filter.pegs.is_none_or(|p| p == r.requirement.pegs))
            .collect();
        out.sort_by(|a, b| {
            (&a.run_id, a.requirement.pegs, &a.requirement.req_id).cmp(&(
                &b.run_id,
                b.requirement.pegs,
                &b.requirement.req_id,
            ))
        });
        out
    }

    /// Record a reviewer decision on a pending requirement.
    pub fn decide(
        &mut self,
        req_id: &str,
        decision: Decision,
        reviewer: Option<&str>,
        note: Option<&str>,
    ) -> Result<ReviewState> {
        self.ensure_present()?;
        let current = self.requirement(req_id)?.review.status;
        if current != ReviewStatus::PendingReview {
            return Err(StoreError::InvalidTransition {
                req_id: req_id.to_string(),
                from: current,
            });
        }
        let review = ReviewState {
            status: decision.target(),
            reviewer: reviewer.map(str::to_string),
            decided_at: (self.clock)(),
            note: note.map(str::to_string),
        };
        self.append(&Event::Decision {
            req_id: req_id.to_string(),
            review: review.clone(),
        })?;
        self.write_audit(req_id, current, &review)?;
        self.apply(Event::Decision {
            req_id: req_id.to_string(),
            review: review.clone(),
        });
        Ok(review)
    }

    fn write_audit(&self, req_id: &str, from: ReviewStatus, review: &ReviewState) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.audit_path())?;
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        writeln!(
            file,
            "{}\t{}\t{} -> {}\treviewer={}\tnote={}",
            review.decided_at.to_rfc3339(),
            req_id,
            from,
            review.status,
            clean(review.reviewer.as_deref().unwrap_or("-")),
            clean(review.note.as_deref().unwrap_or("")),
        )?;
        file.sync_data()?;
        Ok(())
    }

    /// Attach downstream artifact ids (test cases, designs) to a requirement.
    pub fn link_downstream(&mut self, req_id: &str, ids: &[String]) -> Result<&TraceLink> {
        self.ensure_present()?;
        self.requirement(req_id)?;
        let event = Event::Downstream {
            req_id: req_id.to_string(),
            downstream_ids: ids.to_vec(),
        };
        self.append(&event)?;
        self.apply(event);
        Ok(&self.requirement(req_id)?.link)
    }

    /// Source section text and location of a requirement.
    pub fn trace_back(&self, req_id: &str) -> Result<TraceBack> {
        self.ensure_present()?;
        let r = self.requirement(req_id)?;
        let orphan = || StoreError::OrphanTrace {
            req_id: req_id.to_string(),
            doc_id: r.link.doc_id.0.clone(),
            section_label: r.link.section_label.clone(),
        };
        let section = self
            .documents
            .get(r.link.doc_id.as_str())
            .and_then(|d| d.section(&r.link.section_label))
            .ok_or_else(orphan)?;
        Ok(TraceBack {
            req_id: req_id.to_string(),
            doc_id: r.link.doc_id.clone(),
            section_label: r.link.section_label.clone(),
            page: r.link.page,
            excerpt: section.body.clone(),
        })
    }

    /// Final requirement records of a run: auto-accepted and accepted items,
    /// ordered by PEGS category then requirement id.
    pub fn final_records(&self, run_id: &str) -> Result<Vec<ExportRecord>> {
        let run = self.run(run_id)?;
        let mut items: Vec<&StoredRequirement> = run
            .requirements
            .iter()
            .filter(|r| r.review.status.is_final())
            .collect();
        items.sort_by(|a, b| {
            (a.requirement.pegs, &a.requirement.req_id)
                .cmp(&(b.requirement.pegs, &b.requirement.req_id))
        });
        Ok(items.into_iter().map(ExportRecord::from).collect())
    }

    pub fn export_final(&self, run_id: &str, format: ExportFormat) -> Result<Vec<u8>> {
        self.ensure_present()?;
        let records = self.final_records(run_id)?;
        render_records(&records, format)
    }
}

/// Serialize records as JSON lines or CSV. CSV always carries a header row.
pub fn render_records(records: &[ExportRecord], format: ExportFormat) -> Result<Vec<u8>> {
    match format {
        ExportFormat::Jsonl => {
            let mut out = Vec::new();
            for r in records {
                serde_json::to_writer(&mut out, r)
                    .map_err(|e| StoreError::Export(e.to_string()))?;
                out.push(b'\n');
            }
            Ok(out)
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record([
                "req_id",
                "text",
                "type",
                "pegs",
                "priority",
                "category",
                "confidence",
                "state",
                "doc_id",
                "section",
                "page",
            ])
            .map_err(|e| StoreError::Export(e.to_string()))?;
            for r in records {
                w.serialize(r)
                    .map_err(|e| StoreError::Export(e.to_string()))?;
            }
            w.into_inner()
                .map_err(|e| StoreError::Export(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use chrono::TimeZone;

    use super::*;
    use crate::ingest::{load_document, DocFormat};
    use crate::prompting::ChunkRef;
    use crate::taxonomy::{Priority, ReqType};

    fn fixed_clock() -> Clock {
        Arc::new(|| Utc.with_ymd_and_hms(2025, 1, 2, 3, 4, 5).unwrap())
    }

    fn doc() -> Document {
        let text = "# Scope\nThe portal serves tenders.\n\n## Security\nEncrypt data.\n";
        load_document(text.as_bytes(), DocFormat::Markdown, "t", None).unwrap()
    }

    fn merged(doc: &Document, i: usize, flagged: bool) -> MergedRequirement {
        MergedRequirement {
            req_id: format!("run-0001-S{i:03}"),
            text: format!("Requirement number {i}"),
            req_type: ReqType::Functional,
            pegs: PegsCategory::System,
            priority: Priority::High,
            category_label: "Core".into(),
            confidence: if flagged { 1.0 / 3.0 } else { 1.0 },
            contributing_providers: BTreeSet::from(["a".to_string()]),
            flagged_for_review: flagged,
            trace: ChunkRef {
                doc_id: doc.doc_id.clone(),
                section_label: "Security".into(),
                page: 1,
                chunk_id: format!("{}#s1c0", doc.doc_id),
            },
        }
    }

    fn store() -> (tempfile::TempDir, Store, Document) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open_or_create(dir.path().join("s"))
            .unwrap()
            .with_clock(fixed_clock());
        let d = doc();
        s.put_document(&d).unwrap();
        (dir, s, d)
    }

    #[test]
    fn initial_states_follow_flags() {
        let (_t, mut s, d) = store();
        let items: Vec<_> = (0..5).map(|i| merged(&d, i, i < 2)).collect();
        s.persist_run("run-0001", &d.doc_id, &items).unwrap();
        let run = s.run("run-0001").unwrap();
        assert_eq!(run.count_by_status(ReviewStatus::AutoAccepted), 3);
        assert_eq!(run.count_by_status(ReviewStatus::PendingReview), 2);
        assert!(matches!(
            s.persist_run("run-0001", &d.doc_id, &items),
            Err(StoreError::DuplicateRun(_))
        ));
    }

    #[test]
    fn orphan_trace_writes_nothing() {
        let (_t, mut s, d) = store();
        let mut bad = merged(&d, 1, false);
        bad.trace.section_label = "Nowhere".into();
        let items = vec![merged(&d, 0, false), bad];
        assert!(matches!(
            s.persist_run("run-0001", &d.doc_id, &items),
            Err(StoreError::OrphanTrace { .. })
        ));
        assert!(s.runs().next().is_none());
        let reopened = Store::open(s.dir()).unwrap();
        assert!(reopened.runs().next().is_none());
    }

    #[test]
    fn review_transitions() {
        let (_t, mut s, d) = store();
        let items = vec![merged(&d, 0, true), merged(&d, 1, false)];
        s.persist_run("run-0001", &d.doc_id, &items).unwrap();
        let pending = &items[0].req_id;
        let st = s
            .decide(pending, Decision::Accept, Some("alice"), None)
            .unwrap();
        assert_eq!(st.status, ReviewStatus::Accepted);
        assert_eq!(st.reviewer.as_deref(), Some("alice"));
        assert!(matches!(
            s.decide(pending, Decision::Reject, None, None),
            Err(StoreError::InvalidTransition {
                from: ReviewStatus::Accepted,
                ..
            })
        ));
        assert!(matches!(
            s.decide(&items[1].req_id, Decision::Reject, None, None),
            Err(StoreError::InvalidTransition {
                from: ReviewStatus::AutoAccepted,
                ..
            })
        ));
        assert!(matches!(
            s.decide("nope", Decision::Accept, None, None),
            Err(StoreError::UnknownRequirement(_))
        ));
        let audit = fs::read_to_string(s.audit_path()).unwrap();
        assert_eq!(audit.lines().count(), 1);
        assert!(audit.contains("pending_review -> accepted"));
        assert!(audit.contains("reviewer=alice"));
    }

    #[test]
    fn export_filters_and_is_deterministic() {
        let (_t, mut s, d) = store();
        let items: Vec<_> = (0..6).map(|i| merged(&d, i, i >= 3)).collect();
        s.persist_run("run-0001", &d.doc_id, &items).unwrap();
        s.decide(&items[3].req_id, Decision::Accept, None, None)
            .unwrap();
        s.decide(&items[4].req_id, Decision::Reject, None, None)
            .unwrap();
        let a = s.export_final("run-0001", ExportFormat::Jsonl).unwrap();
        assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 4);
        assert_eq!(a, s.export_final("run-0001", ExportFormat::Jsonl).unwrap());
        let csv =
            String::from_utf8(s.export_final("run-0001", ExportFormat::Csv).unwrap()).unwrap();
        assert!(csv.starts_with(
            "req_id,text,type,pegs,priority,category,confidence,state,doc_id,section,page\n"
        ));
        assert_eq!(csv.lines().count(), 5);
        assert!(matches!(
            s.export_final("run-9", ExportFormat::Csv),
            Err(StoreError::UnknownRun(_))
        ));
    }

    #[test]
    fn empty_run_exports_header_only() {
        let (_t, mut s, d) = store();
        s.persist_run("run-0001", &d.doc_id, &[]).unwrap();
        assert!(s
            .export_final("run-0001", ExportFormat::Jsonl)
            .unwrap()
            .is_empty());
        let csv = s.export_final("run-0001", ExportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
    }

    #[test]
    fn trace_back_and_reopen() {
        let (_t, mut s, d) = store();
        let items = vec![merged(&d, 0, false)];
        s.persist_run("run-0001", &d.doc_id, &items).unwrap();
        let tb = s.trace_back(&items[0].req_id).unwrap();
        assert_eq!(tb.section_label, "Security");
        assert_eq!(tb.excerpt, "Encrypt data.");
        s.link_downstream(&items[0].req_id, &["TC-1".to_string()])
            .unwrap();

        let reopened = Store::open(s.dir()).unwrap();
        let r = reopened.requirement(&items[0].req_id).unwrap();
        assert_eq!(r.requirement, items[0]);
        assert_eq!(r.link.downstream_ids, vec!["TC-1".to_string()]);
    }

    #[test]
    fn deleted_log_is_an_error() {
        let (_t, s, d) = store();
        let dir = s.dir().to_path_buf();
        fs::remove_file(dir.join(LOG_FILE)).unwrap();
        assert!(matches!(Store::open(&dir), Err(StoreError::Missing(_))));
        assert!(matches!(
            s.export_final("run-0001", ExportFormat::Csv),
            Err(StoreError::Missing(_))
        ));
        let _ = d;
    }

    #[test]
    fn torn_final_line_is_ignored() {
        let (_t, mut s, d) = store();
        s.persist_run("run-0001", &d.doc_id, &[merged(&d, 0, false)])
            .unwrap();
        let log = s.dir().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"event\":\"run\",\"run\":{\"run_id\":\"run-0")
            .unwrap();
        let reopened = Store::open(s.dir()).unwrap();
        assert_eq!(reopened.runs().count(), 1);
    }

    #[test]
    fn compaction_preserves_state() {
        let (_t, mut s, d) = store();
        let items: Vec<_> = (0..3).map(|i| merged(&d, i, true)).collect();
        s.persist_run("run-0001", &d.doc_id, &items).unwrap();
        s.decide(&items[0].req_id, Decision::Reject, Some("bob"), Some("dup"))
            .unwrap();
        let before = s.export_final("run-0001", ExportFormat::Csv).unwrap();
        s.compact().unwrap();
        let lines = fs::read_to_string(s.dir().join(LOG_FILE))
            .unwrap()
            .lines()
            .count();
        assert_eq!(lines, 2);
        let reopened = Store::open(s.dir()).unwrap();
        assert_eq!(
            reopened
                .export_final("run-0001", ExportFormat::Csv)
                .unwrap(),
            before
        );
        assert_eq!(
            reopened
                .requirement(&items[0].req_id)
                .unwrap()
                .review
                .note
                .as_deref(),
            Some("dup")
        );
    }
}
