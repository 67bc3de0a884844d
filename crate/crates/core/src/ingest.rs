//! Document loading and provenance-preserving chunking.
//!
//! Documents arrive as UTF-8 text in one of three shapes:
//!
//! - **PlainText**: one section per form-feed separated page (or one section).
//! - **Markdown**: ATX headings open sections; a level-1 heading advances the
//!   page counter unless a manifest assigns pages by label.
//! - **PreExtracted**: text produced by an external PDF/DOCX/PPTX extractor plus
//!   a JSON sidecar manifest of `{label, page, start, end}` byte ranges.
//!
//! Chunks never straddle sections, so every chunk resolves back to a
//! `(doc_id, section_label, page)` triple.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest accepted chunk budget; smaller requests are raised to this.
pub const MIN_CHUNK_TOKENS: usize = 64;

/// Token count at which the length term of the complexity score saturates.
const COMPLEXITY_TOKEN_SATURATION: f64 = 20_000.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is not valid UTF-8: {0}")]
    Decode(#[from] std::str::Utf8Error),
    #[error("document contains no non-whitespace text")]
    EmptyDocument,
    #[error("section manifest does not match the text: {0}")]
    ManifestMismatch(String),
    #[error("invalid section manifest: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DocFormat {
    PlainText,
    Markdown,
    PreExtracted,
}

impl DocFormat {
    /// Guess the format from a file extension. Anything that is not Markdown
    /// is treated as plain text; PreExtracted must be requested explicitly.
    pub fn from_path(path: &Path) -> DocFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("md") | Some("markdown") => DocFormat::Markdown,
            _ => DocFormat::PlainText,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            DocFormat::PlainText => "plain",
            DocFormat::Markdown => "markdown",
            DocFormat::PreExtracted => "pre-extracted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub String);

impl DocId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub page: u32,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub title: String,
    pub format: DocFormat,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn section(&self, label: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.label == label)
    }
}

/// One entry of the sidecar manifest. `start`/`end` are byte offsets into the
/// text and are mandatory for PreExtracted input; Markdown manifests only use
/// `label` and `page`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub page: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SectionManifest(pub Vec<ManifestEntry>);

impl SectionManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Sidecar manifest path for a document: `tender.md` -> `tender.manifest.json`.
pub fn manifest_path_for(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Load a document from disk, picking up a sidecar manifest when present.
pub fn load_path(path: &Path, format: DocFormat) -> Result<Document> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest_path = manifest_path_for(path);
    let manifest = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| IngestError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        Some(SectionManifest::from_json(&text)?)
    } else {
        None
    };
    let title = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("document")
        .to_string();
    load_document(&bytes, format, &title, manifest.as_ref())
}

/// Decode and split a document into sections.
pub fn load_document(
    input: &[u8],
    format: DocFormat,
    title: &str,
    manifest: Option<&SectionManifest>,
) -> Result<Document> {
    let text = std::str::from_utf8(input)?;
    if text.trim().is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let mut sections = match format {
        DocFormat::PlainText => split_plain(text),
        DocFormat::Markdown => split_markdown(text, manifest)?,
        DocFormat::PreExtracted => split_pre_extracted(text, manifest)?,
    };
    if sections.is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    disambiguate_labels(&mut sections);

    Ok(Document {
        doc_id: derive_doc_id(format, title, input, manifest),
        title: title.to_string(),
        format,
        sections,
    })
}

fn derive_doc_id(
    format: DocFormat,
    title: &str,
    input: &[u8],
    manifest: Option<&SectionManifest>,
) -> DocId {
    let mut hasher = Sha256::new();
    hasher.update(format.tag().as_bytes());
    hasher.update([0]);
    hasher.update(title.as_bytes());
    hasher.update([0]);
    hasher.update(input);
    if let Some(m) = manifest {
        hasher.update([0]);
        hasher.update(m.to_json().as_bytes());
    }
    let digest = hasher.finalize();
    DocId(format!("doc-{}", &hex::encode(digest)[..12]))
}

fn split_plain(text: &str) -> Vec<Section> {
    text.split('\u{000C}')
        .enumerate()
        .map(|(i, page)| Section {
            label: format!("§{}", i + 1),
            page: i as u32 + 1,
            body: page.trim().to_string(),
        })
        .collect()
}

/// Returns `(level, label)` for an ATX heading line.
fn atx_heading(line: &str) -> Option<(usize, String)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let level = rest.chars().take_while(|&c| c == '#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let after = &rest[level..];
    if !(after.is_empty() || after.starts_with(' ') || after.starts_with('\t')) {
        return None;
    }
    let label = after.trim().trim_end_matches('#').trim_end().to_string();
    Some((level, label))
}

fn split_markdown(text: &str, manifest: Option<&SectionManifest>) -> Result<Vec<Section>> {
    struct Pending {
        label: Option<String>,
        page: u32,
        lines: Vec<String>,
    }

    let mut sections = Vec::new();
    let mut current = Pending {
        label: None,
        page: 1,
        lines: Vec::new(),
    };
    let mut page_counter = 0u32;
    let mut in_fence = false;

    let flush = |p: Pending, sections: &mut Vec<Section>| {
        let body = p.lines.join("\n").trim().to_string();
        match p.label {
            Some(label) => sections.push(Section {
                label,
                page: p.page,
                body,
            }),
            // Text before the first heading only becomes a section if non-blank.
            None if !body.is_empty() => sections.push(Section {
                label: String::new(),
                page: p.page,
                body,
            }),
            None => {}
        }
    };

    for line in text.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            in_fence = !in_fence;
            current.lines.push(line.to_string());
            continue;
        }
        if !in_fence {
            if let Some((level, label)) = atx_heading(line) {
                let prev = std::mem::replace(
                    &mut current,
                    Pending {
                        label: None,
                        page: 0,
                        lines: Vec::new(),
                    },
                );
                flush(prev, &mut sections);
                if level == 1 || page_counter == 0 {
                    page_counter += 1;
                }
                current = Pending {
                    label: Some(label),
                    page: page_counter,
                    lines: Vec::new(),
                };
                continue;
            }
        }
        current.lines.push(line.to_string());
    }
    flush(current, &mut sections);

    for (i, s) in sections.iter_mut().enumerate() {
        if s.label.is_empty() {
            s.label = format!("§{}", i + 1);
        }
    }

    if let Some(manifest) = manifest {
        let pages: HashMap<&str, u32> = manifest
            .0
            .iter()
            .map(|e| (e.label.as_str(), e.page))
            .collect();
        let known: HashSet<&str> = sections.iter().map(|s| s.label.as_str()).collect();
        if let Some(missing) = manifest
            .0
            .iter()
            .find(|e| !known.contains(e.label.as_str()))
        {
            return Err(IngestError::ManifestMismatch(format!(
                "manifest label {:?} has no matching heading",
                missing.label
            )));
        }
        for s in &mut sections {
            if let Some(&page) = pages.get(s.label.as_str()) {
                s.page = page;
            }
        }
    }
    check_pages(&sections)?;
    Ok(sections)
}

fn split_pre_extracted(text: &str, manifest: Option<&SectionManifest>) -> Result<Vec<Section>> {
    let manifest = manifest.ok_or_else(|| {
        IngestError::ManifestMismatch("pre-extracted input requires a section manifest".into())
    })?;
    if manifest.0.is_empty() {
        return Err(IngestError::ManifestMismatch(
            "manifest has no entries".into(),
        ));
    }
    let mut sections = Vec::with_capacity(manifest.0.len());
    for entry in &manifest.0 {
        let (Some(start), Some(end)) = (entry.start, entry.end) else {
            return Err(IngestError::ManifestMismatch(format!(
                "entry {:?} lacks start/end offsets",
                entry.label
            )));
        };
        let body = text.get(start..end).ok_or_else(|| {
            IngestError::ManifestMismatch(format!(
                "entry {:?} range {start}..{end} is outside the {}-byte text or splits a character",
                entry.label,
                text.len()
            ))
        })?;
        sections.push(Section {
            label: entry.label.clone(),
            page: entry.page,
            body: body.trim().to_string(),
        });
    }
    check_pages(&sections)?;
    Ok(sections)
}

fn check_pages(sections: &[Section]) -> Result<()> {
    let mut last = 1;
    for s in sections {
        if s.page < 1 {
            return Err(IngestError::ManifestMismatch(format!(
                "section {:?} has page 0",
                s.label
            )));
        }
        if s.page < last {
            return Err(IngestError::ManifestMismatch(format!(
                "section {:?} page {} precedes page {last}",
                s.label, s.page
            )));
        }
        last = s.page;
    }
    Ok(())
}

// Repeated headings get a " (n)" suffix so that labels resolve uniquely.
fn disambiguate_labels(sections: &mut [Section]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for s in sections.iter_mut() {
        let count = seen.entry(s.label.clone()).or_insert(0);
        *count += 1;
        if *count > 1 {
            s.label = format!("{} ({})", s.label, count);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: DocId,
    pub section_label: String,
    pub page: u32,
    pub text: String,
    pub token_estimate: usize,
}

/// Default token estimator: characters / 4, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Split every section into chunks of at most `max_tokens` estimated tokens.
///
/// Paragraph boundaries are preferred, then sentence boundaries, then a hard
/// cut (at whitespace when one is available in the back half of the window).
pub fn chunk_document(doc: &Document, max_tokens: usize) -> Vec<Chunk> {
    let budget = max_tokens.max(MIN_CHUNK_TOKENS) * 4;
    let mut chunks = Vec::new();
    for (si, section) in doc.sections.iter().enumerate() {
        for (ci, text) in pack_section(&section.body, budget).into_iter().enumerate() {
            chunks.push(Chunk {
                chunk_id: format!("{}#s{}c{}", doc.doc_id, si, ci),
                doc_id: doc.doc_id.clone(),
                section_label: section.label.clone(),
                page: section.page,
                token_estimate: estimate_tokens(&text),
                text,
            });
        }
    }
    chunks
}

struct Unit {
    text: String,
    sep: &'static str,
}

fn pack_section(body: &str, budget: usize) -> Vec<String> {
    let mut units = Vec::new();
    for paragraph in paragraphs(body) {
        let mut first = true;
        let mut push = |text: String, sep: &'static str| {
            units.push(Unit {
                text,
                sep: if first { "\n\n" } else { sep },
            });
            first = false;
        };
        if char_len(&paragraph) <= budget {
            push(paragraph, "");
            continue;
        }
        for sentence in sentences(&paragraph) {
            if char_len(&sentence) <= budget {
                push(sentence, " ");
            } else {
                let mut sep = " ";
                for (piece, next_sep) in hard_cut(&sentence, budget) {
                    push(piece, sep);
                    sep = next_sep;
                }
            }
        }
    }

    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for unit in units {
        let unit_len = char_len(&unit.text);
        if current.is_empty() {
            current = unit.text;
            current_len = unit_len;
            continue;
        }
        let sep_len = unit.sep.chars().count();
        if current_len + sep_len + unit_len <= budget {
            current.push_str(unit.sep);
            current.push_str(&unit.text);
            current_len += sep_len + unit_len;
        } else {
            out.push(std::mem::take(&mut current));
            current = unit.text;
            current_len = unit_len;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn paragraphs(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            if !lines.is_empty() {
                out.push(lines.join("\n").trim().to_string());
                lines.clear();
            }
        } else {
            lines.push(line);
        }
    }
    if !lines.is_empty() {
        out.push(lines.join("\n").trim().to_string());
    }
    out.retain(|p| !p.is_empty());
    out
}

fn sentences(paragraph: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = paragraph.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = iter.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    out.push(paragraph[start..end].trim().to_string());
                    start = end;
                }
            }
        }
    }
    let tail = paragraph[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out.retain(|s| !s.is_empty());
    out
}

/// Cut an oversized sentence into `budget`-sized pieces. Each piece is paired
/// with the separator that should precede the *next* piece: `" "` when the cut
/// consumed whitespace, `""` for a mid-word cut.
fn hard_cut(sentence: &str, budget: usize) -> Vec<(String, &'static str)> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let remaining = chars.len() - pos;
        if remaining <= budget {
            out.push((chars[pos..].iter().collect::<String>(), " "));
            break;
        }
        let window = &chars[pos..pos + budget + 1];
        let ws_cut = (budget / 2..=budget)
            .rev()
            .find(|&k| window[k].is_whitespace());
        match ws_cut {
            Some(k) => {
                let piece: String = chars[pos..pos + k].iter().collect();
                out.push((piece.trim_end().to_string(), " "));
                pos += k;
                while pos < chars.len() && chars[pos].is_whitespace() {
                    pos += 1;
                }
            }
            None => {
                out.push((chars[pos..pos + budget].iter().collect(), ""));
                pos += budget;
            }
        }
    }
    out
}

/// Word-level token counts used by the complexity heuristic.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Length and lexical-diversity blend in `[0, 1]` from raw counts.
pub fn complexity_from_counts(total_tokens: usize, distinct_tokens: usize) -> f64 {
    if total_tokens == 0 {
        return 0.0;
    }
    let length = (total_tokens as f64 / COMPLEXITY_TOKEN_SATURATION).min(1.0);
    let ttr = distinct_tokens as f64 / total_tokens as f64;
    (0.5 * length + 0.5 * ttr).clamp(0.0, 1.0)
}

/// Document complexity used for cost routing.
pub fn complexity_score(doc: &Document) -> f64 {
    let mut total = 0usize;
    let mut distinct = HashSet::new();
    for section in &doc.sections {
        for w in word_tokens(&section.body) {
            total += 1;
            distinct.insert(w);
        }
    }
    complexity_from_counts(total, distinct.len())
}
