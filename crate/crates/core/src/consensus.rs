//! Cross-provider deduplication and weighted consensus.
//!
//! Candidates are embedded, clustered greedily at a strict cosine threshold,
//! and each cluster is scored as
//!
//! ```text
//! confidence = sum_i(w_i * match_i) / sum_i(w_i)
//! ```
//!
//! over every enabled provider, where `match_i` is 1 when provider `i` has at
//! least one member in the cluster. Providers that failed or stayed silent
//! contribute 0 to the numerator but keep their weight in the denominator.
//! Clusters scoring below the flag threshold go to human review.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrator::RunRecord;
use crate::prompting::ChunkRef;
use crate::providers::{CandidateRequirement, ProviderProfile};
use crate::taxonomy::{PegsCategory, Priority, ReqType};

pub const EMBEDDING_DIM: usize = 512;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.85;
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.5;

const HASH_SEED: u64 = 0x5EED_2EF5_0000_0085;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("no enabled providers with positive weight")]
    EmptyProviderSet,
    #[error("invalid embedding table: {0}")]
    EmbeddingTable(String),
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// The `i`-th standard basis vector of the default dimension.
    pub fn basis(i: usize) -> Self {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i % EMBEDDING_DIM] = 1.0;
        Self(v)
    }

    /// Normalize `values` to unit length. Vectors already within 1e-12 of
    /// unit length are kept bit-for-bit; a zero vector maps to e0.
    pub fn from_values(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let mut e0 = vec![0.0; values.len().max(1)];
            e0[0] = 1.0;
            return Self(e0);
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Self(values);
        }
        Self(values.into_iter().map(|x| x / norm).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Normalized mean of `vectors`.
    pub fn centroid<'a>(vectors: impl IntoIterator<Item = &'a EmbeddingVector>) -> Self {
        let mut acc: Vec<f64> = Vec::new();
        for v in vectors {
            if acc.is_empty() {
                acc = vec![0.0; v.dims()];
            }
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        Self::from_values(acc)
    }
}

/// Cosine similarity of two unit vectors (their dot product, clamped).
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ConsensusError> {
    if a.dims() != b.dims() {
        return Err(ConsensusError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(dot(a, b))
}

fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Deterministic offline embedding: lowercase, strip punctuation, collapse
/// whitespace, then hash character trigrams into 512 buckets.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> EmbeddingVector {
        embed_default(text)
    }
}

pub fn normalize_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn seeded_fnv(chars: &[char]) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    let mut buf = [0u8; 4];
    for c in chars {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub fn embed_default(text: &str) -> EmbeddingVector {
    let normalized = normalize_text(text);
    if normalized.is_empty() {
        return EmbeddingVector::basis(0);
    }
    let chars: Vec<char> = normalized.chars().collect();
    let mut v = vec![0.0; EMBEDDING_DIM];
    if chars.len() < 3 {
        v[(seeded_fnv(&chars) % EMBEDDING_DIM as u64) as usize] += 1.0;
    } else {
        for gram in chars.windows(3) {
            v[(seeded_fnv(gram) % EMBEDDING_DIM as u64) as usize] += 1.0;
        }
    }
    EmbeddingVector::from_values(v)
}

/// Embedding hook for vectors computed elsewhere (for example by a remote
/// embedding service). Texts missing from the table fall back to the trigram
/// embedding; table vectors must have the default dimension.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbedder {
    table: HashMap<String, EmbeddingVector>,
}

impl PrecomputedEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Result<Self, ConsensusError> {
        let mut out = HashMap::with_capacity(table.len());
        for (text, values) in table {
            if values.len() != EMBEDDING_DIM {
                return Err(ConsensusError::DimensionMismatch(
                    values.len(),
                    EMBEDDING_DIM,
                ));
            }
            out.insert(text, EmbeddingVector::from_values(values));
        }
        Ok(Self { table: out })
    }

    /// Load a JSON object mapping text to a 512-element array.
    pub fn load(path: &Path) -> Result<Self, ConsensusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConsensusError::EmbeddingTable(format!("{}: {e}", path.display())))?;
        let table: HashMap<String, Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| ConsensusError::EmbeddingTable(e.to_string()))?;
        Self::new(table)
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed(&self, text: &str) -> EmbeddingVector {
        self.table
            .get(text)
            .cloned()
            .unwrap_or_else(|| embed_default(text))
    }
}

/// Greedy leader clustering over vectors given in their processing order.
/// Each vector joins the first cluster whose founder has similarity strictly
/// above `threshold`, otherwise it founds a new cluster. Returns member
/// indices per cluster; the first index of each cluster is its founder.
pub fn cluster_vectors(vectors: &[EmbeddingVector], threshold: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        match clusters
            .iter()
            .position(|members| dot(v, &vectors[members[0]]) > threshold)
        {
            Some(c) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: usize,
    pub members: Vec<CandidateRequirement>,
    /// Index into `members`.
    pub representative: usize,
    pub centroid: EmbeddingVector,
}

impl Cluster {
    pub fn representative(&self) -> &CandidateRequirement {
        &self.members[self.representative]
    }

    /// Distinct providers with at least one member.
    pub fn providers(&self) -> BTreeSet<&str> {
        self.members
            .iter()
            .map(|m| m.provider_id.as_str())
            .collect()
    }
}

fn canonical_cmp(a: &CandidateRequirement, b: &CandidateRequirement) -> std::cmp::Ordering {
    a.text
        .cmp(&b.text)
        .then_with(|| a.provider_id.cmp(&b.provider_id))
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

fn build_clusters(
    ordered: Vec<CandidateRequirement>,
    vectors: Vec<EmbeddingVector>,
    threshold: f64,
) -> Vec<Cluster> {
    cluster_vectors(&vectors, threshold)
        .into_iter()
        .enumerate()
        .map(|(cluster_id, idx)| Cluster {
            cluster_id,
            centroid: EmbeddingVector::centroid(idx.iter().map(|&i| &vectors[i])),
            members: idx.iter().map(|&i| ordered[i].clone()).collect(),
            representative: 0,
        })
        .collect()
}

/// Cluster candidates in canonical `(text, provider_id)` order using the
/// default embedding.
pub fn cluster_candidates(candidates: &[CandidateRequirement], threshold: f64) -> Vec<Cluster> {
    cluster_candidates_with(candidates, threshold, &TrigramEmbedder)
}

pub fn cluster_candidates_with(
    candidates: &[CandidateRequirement],
    threshold: f64,
    embedder: &dyn Embedder,
) -> Vec<Cluster> {
    let mut ordered = candidates.to_vec();
    ordered.sort_by(canonical_cmp);
    let vectors = ordered.iter().map(|c| embedder.embed(&c.text)).collect();
    build_clusters(ordered, vectors, threshold)
}

/// Weighted share of enabled providers that contributed to the cluster.
pub fn consensus_confidence(
    cluster: &Cluster,
    profiles: &[ProviderProfile],
) -> Result<f64, ConsensusError> {
    confidence_for(&cluster.providers(), profiles)
}

fn confidence_for(
    contributors: &BTreeSet<&str>,
    profiles: &[ProviderProfile],
) -> Result<f64, ConsensusError> {
    let enabled = profiles.iter().filter(|p| p.enabled);
    let (mut matched, mut total) = (0.0, 0.0);
    for p in enabled {
        total += p.weight;
        if contributors.contains(p.provider_id.as_str()) {
            matched += p.weight;
        }
    }
    if total <= 0.0 {
        return Err(ConsensusError::EmptyProviderSet);
    }
    Ok((matched / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRequirement {
    pub req_id: String,
    pub text: String,
    pub req_type: ReqType,
    pub pegs: PegsCategory,
    pub priority: Priority,
    pub category_label: String,
    pub confidence: f64,
    pub contributing_providers: BTreeSet<String>,
    pub flagged_for_review: bool,
    pub trace: ChunkRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOptions {
    pub dedup_threshold: f64,
    pub flag_threshold: f64,
    /// Prefix for generated requirement ids, usually the run id.
    pub id_namespace: String,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            id_namespace: "R".to_string(),
        }
    }
}

impl MergeOptions {
    pub fn with_namespace(mut self, ns: impl Into<String>) -> Self {
        self.id_namespace = ns.into();
        self
    }
}

/// Merge the usable candidates of a document's run records.
pub fn merge(
    records: &[RunRecord],
    profiles: &[ProviderProfile],
    options: &MergeOptions,
) -> Vec<MergedRequirement> {
    merge_with(records, profiles, options, &TrigramEmbedder)
}

/// [`merge`] with a caller-supplied embedding.
///
/// Candidates are partitioned by `(pegs, req_type)` and each partition is
/// clustered in order of provider weight (descending), failover rank, text
/// and provider id, so the founding member of a cluster is also its
/// representative: the member from the highest-weight contributor.
pub fn merge_with(
    records: &[RunRecord],
    profiles: &[ProviderProfile],
    options: &MergeOptions,
    embedder: &dyn Embedder,
) -> Vec<MergedRequirement> {
    let weight_of = |id: &str| {
        profiles
            .iter()
            .find(|p| p.enabled && p.provider_id == id)
            .map_or((0.0, u32::MAX), |p| (p.weight, p.failover_rank))
    };

    let mut sources: HashMap<&str, &ChunkRef> = HashMap::new();
    let mut partitions: BTreeMap<(PegsCategory, ReqType), Vec<CandidateRequirement>> =
        BTreeMap::new();
    for record in records {
        sources.insert(record.source.chunk_id.as_str(), &record.source);
        for c in record.candidates() {
            partitions
                .entry((c.pegs, c.req_type))
                .or_default()
                .push(c.clone());
        }
    }

    let mut merged = Vec::new();
    for ((pegs, req_type), mut items) in partitions {
        items.sort_by(|a, b| {
            let (wa, ra) = weight_of(&a.provider_id);
            let (wb, rb) = weight_of(&b.provider_id);
            wb.total_cmp(&wa)
                .then(ra.cmp(&rb))
                .then_with(|| canonical_cmp(a, b))
        });
        let vectors: Vec<EmbeddingVector> = items.iter().map(|c| embedder.embed(&c.text)).collect();
        for cluster in build_clusters(items, vectors, options.dedup_threshold) {
            let contributors = cluster.providers();
            // An empty provider set means nothing can be confirmed.
            let confidence = confidence_for(&contributors, profiles).unwrap_or(0.0);
            let rep = cluster.representative();
            let votes = provider_votes(&cluster, &weight_of);
            let priority =
                weighted_majority(votes.iter().map(|(w, m)| (*w, m.priority)), rep.priority);
            let category_label = weighted_majority(
                votes.iter().map(|(w, m)| (*w, m.category_label.clone())),
                rep.category_label.clone(),
            );
            let trace = sources
                .get(rep.chunk_id.as_str())
                .map(|s| (*s).clone())
                .unwrap_or_else(|| ChunkRef {
                    doc_id: crate::ingest::DocId(String::new()),
                    section_label: String::new(),
                    page: 1,
                    chunk_id: rep.chunk_id.clone(),
                });
            merged.push(MergedRequirement {
                req_id: requirement_id(&options.id_namespace, pegs, req_type, &rep.text),
                text: rep.text.clone(),
                req_type,
                pegs,
                priority,
                category_label,
                confidence,
                contributing_providers: contributors.iter().map(|s| s.to_string()).collect(),
                flagged_for_review: confidence < options.flag_threshold,
                trace,
            });
        }
    }
    merged
}

// One vote per contributing provider: its first member in cluster order.
fn provider_votes<'a>(
    cluster: &'a Cluster,
    weight_of: &dyn Fn(&str) -> (f64, u32),
) -> Vec<(f64, &'a CandidateRequirement)> {
    let mut seen = BTreeSet::new();
    cluster
        .members
        .iter()
        .filter(|m| seen.insert(m.provider_id.as_str()))
        .map(|m| (weight_of(&m.provider_id).0, m))
        .collect()
}

/// Label with the largest summed weight. Ties go to `fallback` when it is
/// among the leaders, otherwise to the smallest tied label.
fn weighted_majority<L: Ord + Clone>(votes: impl Iterator<Item = (f64, L)>, fallback: L) -> L {
    let mut tally: BTreeMap<L, f64> = BTreeMap::new();
    for (w, label) in votes {
        *tally.entry(label).or_insert(0.0) += w;
    }
    let Some(best) = tally.values().copied().reduce(f64::max) else {
        return fallback;
    };
    let leaders: Vec<&L> = tally
        .iter()
        .filter(|(_, &w)| (w - best).abs() <= 1e-12)
        .map(|(l, _)| l)
        .collect();
    if leaders.len() == 1 {
        return leaders[0].clone();
    }
    if leaders.contains(&&fallback) {
        fallback
    } else {
        leaders[0].clone()
    }
}

fn requirement_id(namespace: &str, pegs: PegsCategory, req_type: ReqType, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(pegs.name().as_bytes());
    h.update([0]);
    h.update(req_type.as_str().as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    let digest = hex::encode(h.finalize());
    format!("{namespace}-{}{}", pegs.letter(), &digest[..10])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagStats {
    pub total: usize,
    pub flagged: usize,
    pub flagged_fraction: f64,
}

pub fn flag_rate(merged: &[MergedRequirement]) -> FlagStats {
    let flagged = merged.iter().filter(|m| m.flagged_for_review).count();
    FlagStats {
        total: merged.len(),
        flagged,
        flagged_fraction: if merged.is_empty() {
            0.0
        } else {
            flagged as f64 / merged.len() as f64
        },
    }
}
