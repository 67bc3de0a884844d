//! Evaluation against ground truth, agreement statistics, and cost and time
//! accounting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::hash::Hash;
use std::io::BufRead;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{cosine, embed_default, EmbeddingVector, MergedRequirement};
use crate::orchestrator::RunRecord;
use crate::providers::{MAX_WEIGHT, MIN_WEIGHT};
use crate::store::ExportRecord;
use crate::taxonomy::{PegsCategory, Priority, ReqType};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("ground truth line {line}: {message}")]
    GroundTruth { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthItem {
    pub gt_id: String,
    pub text: String,
    pub req_type: ReqType,
    pub pegs: PegsCategory,
    pub priority: Priority,
    pub doc_id: String,
}

#[derive(Deserialize)]
struct RawGroundTruth {
    #[serde(alias = "req_id")]
    gt_id: Option<String>,
    text: String,
    #[serde(rename = "type", alias = "req_type")]
    req_type: Option<String>,
    pegs: String,
    priority: Option<String>,
    #[serde(default)]
    doc_id: String,
}

/// Parse line-delimited ground truth records. Field names follow the store
/// export; `gt_id` falls back to `req_id` or a line-based id.
pub fn read_ground_truth(reader: impl BufRead) -> Result<Vec<GroundTruthItem>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MetricsError::GroundTruth {
            line: i + 1,
            message,
        };
        let raw: RawGroundTruth = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if raw.text.trim().is_empty() {
            return Err(err("empty text".into()));
        }
        out.push(GroundTruthItem {
            gt_id: raw.gt_id.unwrap_or_else(|| format!("gt-{:05}", i + 1)),
            text: raw.text,
            req_type: raw
                .req_type
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(|e| err(format!("{e}")))?
                .unwrap_or(ReqType::Functional),
            pegs: raw.pegs.parse().map_err(|e| err(format!("{e}")))?,
            priority: raw
                .priority
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(|e| err(format!("{e}")))?
                .unwrap_or(Priority::Medium),
            doc_id: raw.doc_id,
        });
    }
    Ok(out)
}

/// Minimal view of an item taking part in ground-truth matching.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub text: String,
    pub pegs: PegsCategory,
    pub doc_id: String,
}

impl From<&MergedRequirement> for EvalItem {
    fn from(m: &MergedRequirement) -> Self {
        EvalItem {
            id: m.req_id.clone(),
            text: m.text.clone(),
            pegs: m.pegs,
            doc_id: m.trace.doc_id.0.clone(),
        }
    }
}

impl From<&GroundTruthItem> for EvalItem {
    fn from(g: &GroundTruthItem) -> Self {
        EvalItem {
            id: g.gt_id.clone(),
            text: g.text.clone(),
            pegs: g.pegs,
            doc_id: g.doc_id.clone(),
        }
    }
}

impl TryFrom<&ExportRecord> for EvalItem {
    type Error = crate::taxonomy::LabelError;

    fn try_from(r: &ExportRecord) -> Result<Self, Self::Error> {
        Ok(EvalItem {
            id: r.req_id.clone(),
            text: r.text.clone(),
            pegs: r.pegs.parse()?,
            doc_id: r.doc_id.clone(),
        })
    }
}

/// One-to-one pairing of extracted items with ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// (extracted index, ground-truth index, similarity)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_extracted: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
    pub counts: BTreeMap<PegsCategory, CategoryCounts>,
}

impl Assignment {
    pub fn total(&self) -> CategoryCounts {
        self.counts.values().copied().sum()
    }
}

fn docs_compatible(a: &str, b: &str) -> bool {
    a.is_empty() || b.is_empty() || a == b
}

/// Greedy maximum-similarity matching. Only pairs in the same PEGS category
/// (and document, when both carry one) with similarity strictly above the
/// threshold are eligible. Pairs are taken in order of decreasing similarity,
/// ties broken by ground-truth id then extracted id.
pub fn match_to_ground_truth(
    extracted: &[EvalItem],
    ground_truth: &[EvalItem],
    sim_threshold: f64,
) -> Assignment {
    let ev: Vec<EmbeddingVector> = extracted.iter().map(|e| embed_default(&e.text)).collect();
    let gv: Vec<EmbeddingVector> = ground_truth
        .iter()
        .map(|g| embed_default(&g.text))
        .collect();
    let mut candidates = Vec::new();
    for (i, e) in extracted.iter().enumerate() {
        for (j, g) in ground_truth.iter().enumerate() {
            if e.pegs != g.pegs || !docs_compatible(&e.doc_id, &g.doc_id) {
                continue;
            }
            let sim = cosine(&ev[i], &gv[j]).unwrap_or(0.0);
            if sim > sim_threshold {
                candidates.push((i, j, sim));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| ground_truth[a.1].id.cmp(&ground_truth[b.1].id))
            .then_with(|| extracted[a.0].id.cmp(&extracted[b.0].id))
            .then_with(|| extracted[a.0].text.cmp(&extracted[b.0].text))
    });

    let mut used_e = vec![false; extracted.len()];
    let mut used_g = vec![false; ground_truth.len()];
    let mut out = Assignment::default();
    for (i, j, sim) in candidates {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            out.pairs.push((i, j, sim));
            out.counts.entry(extracted[i].pegs).or_default().tp += 1;
        }
    }
    for (i, e) in extracted.iter().enumerate() {
        if !used_e[i] {
            out.unmatched_extracted.push(i);
            out.counts.entry(e.pegs).or_default().fp += 1;
        }
    }
    for (j, g) in ground_truth.iter().enumerate() {
        if !used_g[j] {
            out.unmatched_ground_truth.push(j);
            out.counts.entry(g.pegs).or_default().fn_ += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl CategoryCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    /// tp / (tp + fp), with 0/0 = 1.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// tp / (tp + fn), with 0/0 = 1.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn scores(&self) -> Scores {
        Scores {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

impl std::ops::Add for CategoryCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::iter::Sum for CategoryCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Round half away from zero to `places` decimals.
pub fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    let scaled = x * f;
    // Nudge values that sit a hair below a .5 boundary due to binary error.
    (scaled + scaled.signum() * 1e-9).round() / f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub by_type: BTreeMap<String, usize>,
    pub by_priority: BTreeMap<String, usize>,
    pub by_category: BTreeMap<String, usize>,
}

impl Distributions {
    pub fn from_merged(merged: &[MergedRequirement]) -> Self {
        let mut d = Self::default();
        for m in merged {
            *d.by_type
                .entry(m.req_type.as_str().to_string())
                .or_default() += 1;
            *d.by_priority
                .entry(m.priority.as_str().to_string())
                .or_default() += 1;
            *d.by_category.entry(m.category_label.clone()).or_default() += 1;
        }
        d
    }

    /// Percentage of items with the given type label, or `None` when empty.
    pub fn type_share(&self, req_type: ReqType) -> Option<f64> {
        let total: usize = self.by_type.values().sum();
        (total > 0).then(|| {
            100.0 * *self.by_type.get(req_type.as_str()).unwrap_or(&0) as f64 / total as f64
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_usd: f64,
    pub per_requirement_usd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub wall_secs: f64,
    pub per_requirement_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<PegsCategory, Scores>,
    pub overall: Scores,
    pub pegs_coverage: f64,
    pub distributions: Distributions,
    pub cost: CostSummary,
    pub time: TimeSummary,
}

impl EvalReport {
    /// Report built from per-category counts alone.
    pub fn from_counts(counts: &BTreeMap<PegsCategory, CategoryCounts>) -> Self {
        let per_category = PegsCategory::ALL
            .iter()
            .map(|p| (*p, counts.get(p).copied().unwrap_or_default().scores()))
            .collect();
        Self {
            per_category,
            overall: counts.values().copied().sum::<CategoryCounts>().scores(),
            pegs_coverage: 0.0,
            distributions: Distributions::default(),
            cost: CostSummary {
                total_usd: 0.0,
                per_requirement_usd: None,
            },
            time: TimeSummary {
                wall_secs: 0.0,
                per_requirement_secs: None,
            },
        }
    }

    /// Human-readable table with F1 values at two decimals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>5} {:>5} {:>9} {:>6} {:>5}",
            "Category", "TP", "FP", "FN", "Precision", "Recall", "F1"
        );
        let row = |s: &mut String, name: &str, sc: &Scores| {
            let _ = writeln!(
                s,
                "{:<12} {:>5} {:>5} {:>5} {:>9.2} {:>6.2} {:>5.2}",
                name,
                sc.tp,
                sc.fp,
                sc.fn_,
                round_to(sc.precision, 2),
                round_to(sc.recall, 2),
                round_to(sc.f1, 2)
            );
        };
        for (p, sc) in &self.per_category {
            row(&mut s, p.name(), sc);
        }
        row(&mut s, "Total", &self.overall);
        let _ = writeln!(s, "PEGS coverage: {}", format_percent(self.pegs_coverage));
        if let (Some(f), Some(n)) = (
            self.distributions.type_share(ReqType::Functional),
            self.distributions.type_share(ReqType::NonFunctional),
        ) {
            let _ = writeln!(s, "Functional / non-functional: {f:.1}% / {n:.1}%");
        }
        let _ = writeln!(
            s,
            "Cost: ${:.4} total, {} per requirement",
            self.cost.total_usd,
            self.cost
                .per_requirement_usd
                .map_or("N/A".to_string(), |c| format!("${c:.4}"))
        );
        s
    }
}

/// Fraction rendered as a percentage with one decimal, e.g. `92.0%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", round_to(fraction * 100.0, 1))
}

/// Mean over documents of the share of PEGS categories with at least one
/// requirement. No documents gives 0.
pub fn pegs_coverage<D, I>(documents: D) -> f64
where
    D: IntoIterator<Item = I>,
    I: IntoIterator<Item = PegsCategory>,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for doc in documents {
        let covered: BTreeSet<PegsCategory> = doc.into_iter().collect();
        sum += covered.len() as f64 / 4.0;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// PEGS coverage of merged requirements grouped by source document.
pub fn coverage_by_document(merged: &[MergedRequirement]) -> f64 {
    let mut by_doc: BTreeMap<&str, Vec<PegsCategory>> = BTreeMap::new();
    for m in merged {
        by_doc
            .entry(m.trace.doc_id.as_str())
            .or_default()
            .push(m.pegs);
    }
    pegs_coverage(by_doc.into_values())
}

/// Evaluate merged requirements against ground truth and summarize the run.
pub fn compute_report(
    extracted: &[MergedRequirement],
    ground_truth: &[GroundTruthItem],
    run_records: &[RunRecord],
) -> EvalReport {
    let e: Vec<EvalItem> = extracted.iter().map(EvalItem::from).collect();
    let g: Vec<EvalItem> = ground_truth.iter().map(EvalItem::from).collect();
    let assignment = match_to_ground_truth(&e, &g, DEFAULT_MATCH_THRESHOLD);
    let mut report = EvalReport::from_counts(&assignment.counts);
    report.pegs_coverage = coverage_by_document(extracted);
    report.distributions = Distributions::from_merged(extracted);
    let usage = EngineUsage::from_records(run_records, extracted.len());
    report.cost = CostSummary {
        total_usd: usage.total_cost_usd,
        per_requirement_usd: usage.cost_per_requirement(),
    };
    report.time = TimeSummary {
        wall_secs: usage.wall.as_secs_f64(),
        per_requirement_secs: usage.secs_per_requirement(),
    };
    report
}

/// Cohen's kappa for two annotators' label sequences.
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ma: HashMap<&L, usize> = HashMap::new();
    let mut mb: HashMap<&L, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let p_o = agree / n;
    let p_e: f64 = ma
        .iter()
        .map(|(l, &ca)| ca as f64 / n * (*mb.get(l).unwrap_or(&0) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Hourly cost and throughput of manual extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualBaseline {
    pub hourly_rate_usd: f64,
    pub requirements_per_hour: f64,
    /// Externally quoted per-requirement figure, reported alongside the
    /// computed one when the two disagree.
    pub quoted_cost_per_requirement_usd: Option<f64>,
}

impl Default for ManualBaseline {
    fn default() -> Self {
        Self {
            hourly_rate_usd: 60.50,
            requirements_per_hour: 12.3,
            quoted_cost_per_requirement_usd: Some(0.082),
        }
    }
}

impl ManualBaseline {
    pub fn cost_per_requirement(&self) -> f64 {
        self.hourly_rate_usd / self.requirements_per_hour
    }

    pub fn minutes_per_requirement(&self) -> f64 {
        60.0 / self.requirements_per_hour
    }
}

/// Totals of an automated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineUsage {
    pub total_cost_usd: f64,
    pub wall: Duration,
    pub requirements: usize,
}

impl EngineUsage {
    /// Cost and wall time summed over run records.
    pub fn from_records(records: &[RunRecord], requirements: usize) -> Self {
        Self {
            total_cost_usd: records.iter().map(|r| r.cost_usd).sum(),
            wall: records.iter().map(|r| r.wall_latency).sum(),
            requirements,
        }
    }

    pub fn cost_per_requirement(&self) -> Option<f64> {
        (self.requirements > 0).then(|| self.total_cost_usd / self.requirements as f64)
    }

    pub fn secs_per_requirement(&self) -> Option<f64> {
        (self.requirements > 0).then(|| self.wall.as_secs_f64() / self.requirements as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTimeReport {
    pub engine_total_usd: f64,
    pub engine_cost_per_requirement_usd: Option<f64>,
    pub engine_minutes_per_requirement: Option<f64>,
    pub manual_cost_per_requirement_usd: f64,
    pub manual_minutes_per_requirement: f64,
    pub quoted_manual_cost_per_requirement_usd: Option<f64>,
    /// Percent saved against the computed manual cost.
    pub cost_reduction_pct: Option<f64>,
    /// Percent saved against the quoted manual cost.
    pub cost_reduction_vs_quoted_pct: Option<f64>,
    pub time_reduction_pct: Option<f64>,
}

fn reduction_pct(engine: f64, manual: f64) -> Option<f64> {
    (manual > 0.0).then(|| 100.0 * (manual - engine) / manual)
}

pub fn cost_time_report(usage: &EngineUsage, baseline: &ManualBaseline) -> CostTimeReport {
    let engine_cost = usage.cost_per_requirement();
    let engine_minutes = usage.secs_per_requirement().map(|s| s / 60.0);
    let manual_cost = baseline.cost_per_requirement();
    let manual_minutes = baseline.minutes_per_requirement();
    CostTimeReport {
        engine_total_usd: usage.total_cost_usd,
        engine_cost_per_requirement_usd: engine_cost,
        engine_minutes_per_requirement: engine_minutes,
        manual_cost_per_requirement_usd: manual_cost,
        manual_minutes_per_requirement: manual_minutes,
        quoted_manual_cost_per_requirement_usd: baseline.quoted_cost_per_requirement_usd,
        cost_reduction_pct: engine_cost.and_then(|c| reduction_pct(c, manual_cost)),
        cost_reduction_vs_quoted_pct: engine_cost
            .zip(baseline.quoted_cost_per_requirement_usd)
            .and_then(|(c, q)| reduction_pct(c, q)),
        time_reduction_pct: engine_minutes.and_then(|m| reduction_pct(m, manual_minutes)),
    }
}

impl fmt::Display for CostTimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let usd = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("${x:.4}"));
        let min = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.1} min"));
        let pct = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.1}%"));
        writeln!(f, "{:<28} {:>12} {:>12}", "", "Engine", "Manual")?;
        writeln!(
            f,
            "{:<28} {:>12} {:>12}",
            "Cost per requirement",
            usd(self.engine_cost_per_requirement_usd),
            usd(Some(self.manual_cost_per_requirement_usd))
        )?;
        if let Some(q) = self.quoted_manual_cost_per_requirement_usd {
            writeln!(
                f,
                "{:<28} {:>12} {:>12}",
                "Quoted manual cost",
                "",
                usd(Some(q))
            )?;
        }
        writeln!(
            f,
            "{:<28} {:>12} {:>12}",
            "Time per requirement",
            min(self.engine_minutes_per_requirement),
            min(Some(self.manual_minutes_per_requirement))
        )?;
        writeln!(f, "Cost reduction: {}", pct(self.cost_reduction_pct))?;
        if self.quoted_manual_cost_per_requirement_usd.is_some() {
            writeln!(
                f,
                "Cost reduction vs quoted: {}",
                pct(self.cost_reduction_vs_quoted_pct)
            )?;
        }
        writeln!(f, "Time reduction: {}", pct(self.time_reduction_pct))
    }
}

/// Headline quality figures of one prompting mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub coverage: f64,
}

impl From<&EvalReport> for AblationRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            precision: r.overall.precision,
            recall: r.overall.recall,
            f1: r.overall.f1,
            coverage: r.pegs_coverage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub generic: AblationRow,
    pub pegs: AblationRow,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Coverage difference in percentage points.
    pub coverage_pp: f64,
}

/// Absolute improvements of PEGS-guided over generic prompting, rounded to
/// two decimals (one for percentage points).
pub fn ablation_compare(pegs: &AblationRow, generic: &AblationRow) -> AblationDelta {
    AblationDelta {
        generic: *generic,
        pegs: *pegs,
        precision: round_to(pegs.precision - generic.precision, 2),
        recall: round_to(pegs.recall - generic.recall, 2),
        f1: round_to(pegs.f1 - generic.f1, 2),
        coverage_pp: round_to(100.0 * (pegs.coverage - generic.coverage), 1),
    }
}

impl fmt::Display for AblationDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>9} {:>6} {:>5} {:>9}",
            "Approach", "Precision", "Recall", "F1", "Coverage"
        )?;
        for (name, r) in [("Generic", &self.generic), ("PEGS-guided", &self.pegs)] {
            writeln!(
                f,
                "{:<16} {:>9.2} {:>6.2} {:>5.2} {:>9}",
                name,
                round_to(r.precision, 2),
                round_to(r.recall, 2),
                round_to(r.f1, 2),
                format_percent(r.coverage)
            )?;
        }
        writeln!(
            f,
            "{:<16} {:>+9.2} {:>+6.2} {:>+5.2} {:>+8.1}pp",
            "Absolute delta", self.precision, self.recall, self.f1, self.coverage_pp
        )
    }
}

/// Per-provider scores of each provider's own candidates, before merging.
/// Repeated `(pegs, text)` pairs from one provider count once.
pub fn provider_scores(
    records: &[RunRecord],
    ground_truth: &[GroundTruthItem],
) -> BTreeMap<String, Scores> {
    let mut per_provider: BTreeMap<String, BTreeMap<(PegsCategory, String), EvalItem>> =
        BTreeMap::new();
    let mut doc_of: HashMap<&str, &str> = HashMap::new();
    for r in records {
        doc_of.insert(r.source.chunk_id.as_str(), r.source.doc_id.as_str());
        for resp in r.per_provider.iter().filter(|p| p.is_ok()) {
            let entry = per_provider.entry(resp.provider_id.clone()).or_default();
            for c in &resp.candidates {
                entry
                    .entry((c.pegs, c.text.clone()))
                    .or_insert_with(|| EvalItem {
                        id: format!("{}:{}", c.provider_id, c.text),
                        text: c.text.clone(),
                        pegs: c.pegs,
                        doc_id: r.source.doc_id.0.clone(),
                    });
            }
        }
    }
    let g: Vec<EvalItem> = ground_truth.iter().map(EvalItem::from).collect();
    per_provider
        .into_iter()
        .map(|(id, items)| {
            let e: Vec<EvalItem> = items.into_values().collect();
            let counts = match_to_ground_truth(&e, &g, DEFAULT_MATCH_THRESHOLD).total();
            (id, counts.scores())
        })
        .collect()
}

/// Provider weights proportional to standalone F1, scaled so a provider at
/// the mean F1 gets weight 1, then clamped to the allowed weight range.
/// With no signal (all F1 zero) every provider keeps weight 1.
pub fn calibrate_weights(f1_by_provider: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let n = f1_by_provider.len();
    let mean = if n == 0 {
        0.0
    } else {
        f1_by_provider.values().sum::<f64>() / n as f64
    };
    f1_by_provider
        .iter()
        .map(|(id, f1)| {
            let w = if mean > 0.0 {
                (f1 / mean).clamp(MIN_WEIGHT, MAX_WEIGHT)
            } else {
                1.0
            };
            (id.clone(), round_to(w, 4))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, text: &str, pegs: PegsCategory) -> EvalItem {
        EvalItem {
            id: id.into(),
            text: text.into(),
            pegs,
            doc_id: "d".into(),
        }
    }

    #[test]
    fn table_rows() {
        for ((tp, fp, fn_), f1) in [
            ((38, 4, 5), 0.89),
            ((31, 7, 9), 0.79),
            ((42, 3, 4), 0.92),
            ((63, 8, 8), 0.89),
            ((174, 22, 26), 0.88),
        ] {
            let c = CategoryCounts::new(tp, fp, fn_);
            assert_eq!(round_to(c.f1(), 2), f1, "{tp}/{fp}/{fn_}");
        }
    }

    #[test]
    fn degenerate_counts() {
        let c = CategoryCounts::new(0, 0, 5);
        assert_eq!(c.precision(), 1.0);
        assert_eq!(c.recall(), 0.0);
        assert_eq!(c.f1(), 0.0);
        assert_eq!(CategoryCounts::default().f1(), 1.0);
    }

    #[test]
    fn matching_requires_same_category() {
        let text = "The system shall encrypt stored data";
        let same = match_to_ground_truth(
            &[item("e", text, PegsCategory::System)],
            &[item("g", text, PegsCategory::System)],
            0.85,
        );
        assert_eq!(same.total(), CategoryCounts::new(1, 0, 0));
        let cross = match_to_ground_truth(
            &[item("e", text, PegsCategory::System)],
            &[item("g", text, PegsCategory::Goals)],
            0.85,
        );
        assert_eq!(cross.total(), CategoryCounts::new(0, 1, 1));
    }

    #[test]
    fn coverage_examples() {
        use PegsCategory::*;
        assert_eq!(pegs_coverage([vec![Project, Goals, System]]), 0.75);
        assert_eq!(
            pegs_coverage([PegsCategory::ALL.to_vec(), PegsCategory::ALL.to_vec()]),
            1.0
        );
        assert_eq!(format_percent(0.92), "92.0%");
        assert_eq!(format_percent(0.613), "61.3%");
        assert_eq!(pegs_coverage(Vec::<Vec<PegsCategory>>::new()), 0.0);
    }

    #[test]
    fn kappa_examples() {
        let a = [1, 0, 1, 1, 0];
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert!(matches!(
            cohen_kappa(&a, &a[..3]),
            Err(MetricsError::LengthMismatch(5, 3))
        ));
        assert!(matches!(
            cohen_kappa::<u8>(&[], &[]),
            Err(MetricsError::EmptyInput)
        ));
        assert_eq!(cohen_kappa(&[3, 3], &[3, 3]).unwrap(), 1.0);
    }

    #[test]
    fn manual_baseline() {
        let b = ManualBaseline::default();
        assert_eq!(format!("{:.4}", b.cost_per_requirement()), "4.9187");
        assert_eq!(format!("{:.1}", b.minutes_per_requirement()), "4.9");
    }

    #[test]
    fn cost_report_zero_requirements_is_na() {
        let usage = EngineUsage {
            total_cost_usd: 1.0,
            wall: Duration::from_secs(10),
            requirements: 0,
        };
        let r = cost_time_report(&usage, &ManualBaseline::default());
        assert_eq!(r.engine_cost_per_requirement_usd, None);
        assert_eq!(r.cost_reduction_pct, None);
        assert!(r.to_string().contains("N/A"));
    }

    #[test]
    fn ablation_table_values() {
        let generic = AblationRow {
            precision: 0.74,
            recall: 0.68,
            f1: 0.71,
            coverage: 0.613,
        };
        let pegs = AblationRow {
            precision: 0.89,
            recall: 0.87,
            f1: 0.88,
            coverage: 0.92,
        };
        let d = ablation_compare(&pegs, &generic);
        assert_eq!(
            (d.precision, d.recall, d.f1, d.coverage_pp),
            (0.15, 0.19, 0.17, 30.7)
        );
        let z = ablation_compare(&pegs, &pegs);
        assert_eq!(
            (z.precision, z.recall, z.f1, z.coverage_pp),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(d.to_string().contains("+30.7pp"));
    }

    #[test]
    fn calibration_clamps() {
        let f1 = BTreeMap::from([
            ("a".to_string(), 0.9),
            ("b".to_string(), 0.9),
            ("c".to_string(), 0.0),
        ]);
        let w = calibrate_weights(&f1);
        assert_eq!(w["a"], 1.5);
        assert_eq!(w["c"], MIN_WEIGHT);
        let zero = BTreeMap::from([("a".to_string(), 0.0)]);
        assert_eq!(calibrate_weights(&zero)["a"], 1.0);
    }

    #[test]
    fn ground_truth_parsing() {
        let text = "{\"req_id\":\"G1\",\"text\":\"Encrypt data\",\"type\":\"non-functional\",\"pegs\":\"System\",\"priority\":\"High\",\"doc_id\":\"d\"}\n\n{\"text\":\"Cut costs\",\"pegs\":\"G\"}\n";
        let items = read_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].gt_id, "G1");
        assert_eq!(items[0].req_type, ReqType::NonFunctional);
        assert_eq!(items[1].pegs, PegsCategory::Goals);
        assert!(read_ground_truth("{\"text\":\"\",\"pegs\":\"S\"}".as_bytes()).is_err());
    }
}
