//! End-to-end extraction driver shared by the command line and the HTTP
//! service: ingest, plan prompts, orchestrate providers, merge, persist.
//!
//! Extraction is split in two phases so that a service can run provider
//! calls without holding the store lock: [`Pipeline::extract`] does all
//! network work, [`Pipeline::commit`] mints the run id, merges and persists.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::consensus::{merge_with, Embedder, MergedRequirement};
use crate::ingest::{self, chunk_document, complexity_score, DocFormat, Document, IngestError};
use crate::metrics::{coverage_by_document, Distributions};
use crate::orchestrator::{BatchReport, ExecutionMode, OrchestrationPlan};
use crate::prompting::PromptTemplates;
use crate::providers::{Provider, ProviderProfile};
use crate::store::{ReviewStatus, RunEntry, RunMeta, Store, StoreError};
use crate::taxonomy::ReqType;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("every provider failed for all {prompts} prompts of {doc_id}")]
    AllProvidersFailed { doc_id: String, prompts: usize },
}

/// Provider responses for one document, not yet merged.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub document: Document,
    pub batch: BatchReport,
    /// Providers forming the consensus denominator for this document.
    pub consensus_profiles: Vec<ProviderProfile>,
    pub complexity: f64,
    pub mode: ExecutionMode,
}

impl Extraction {
    pub fn all_failed(&self) -> bool {
        self.batch.all_failed()
    }
}

#[derive(Clone)]
pub struct Pipeline {
    config: RunConfig,
    plan: OrchestrationPlan,
    templates: PromptTemplates,
    embedder: Arc<dyn Embedder>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("mode", &self.plan.mode)
            .field("providers", &self.plan.profiles())
            .finish()
    }
}

impl Pipeline {
    /// Build providers, templates and embedding from the configuration.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let providers = config.build_providers()?;
        Self::with_providers(config, providers)
    }

    /// Use already constructed providers; their profiles replace the ones in
    /// the configuration.
    pub fn with_providers(
        mut config: RunConfig,
        providers: Vec<Provider>,
    ) -> Result<Self, PipelineError> {
        config.providers = providers.iter().map(|p| p.profile.clone()).collect();
        config.validate()?;
        let plan = config.plan(providers)?;
        let templates = config.templates()?;
        let embedder = config.embedder()?;
        Ok(Self {
            config,
            plan,
            templates,
            embedder,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn plan(&self) -> &OrchestrationPlan {
        &self.plan
    }

    /// Load a document from disk, inferring the format from its extension
    /// and picking up a sidecar section manifest.
    pub fn load_input(path: &Path) -> Result<Document, PipelineError> {
        Ok(ingest::load_path(path, DocFormat::from_path(path))?)
    }

    /// Prompt every routed provider for every chunk of the document.
    pub async fn extract(&self, document: Document) -> Extraction {
        let complexity = complexity_score(&document);
        let plan = self.plan.routed(complexity);
        let chunks = chunk_document(&document, self.config.chunk_max_tokens);
        let prompts = self
            .templates
            .plan_prompts(&chunks, self.config.prompt_mode);
        let batch = plan.execute_plan(&prompts).await;
        let consensus_profiles = match plan.mode {
            ExecutionMode::Parallel => plan.profiles(),
            // Only accepted answers are used, so only accepting providers
            // count towards agreement.
            ExecutionMode::Sequential => {
                let accepted: BTreeSet<&str> = batch
                    .records
                    .iter()
                    .filter_map(|r| r.accepted_provider.as_deref())
                    .collect();
                let used: Vec<ProviderProfile> = plan
                    .profiles()
                    .into_iter()
                    .filter(|p| accepted.contains(p.provider_id.as_str()))
                    .collect();
                if used.is_empty() {
                    plan.profiles()
                } else {
                    used
                }
            }
        };
        Extraction {
            document,
            batch,
            consensus_profiles,
            complexity,
            mode: plan.mode,
        }
    }

    /// Merge an extraction under a fresh run id and persist it.
    pub fn commit(
        &self,
        store: &mut Store,
        extraction: &Extraction,
    ) -> Result<RunSummary, PipelineError> {
        let doc = &extraction.document;
        if extraction.all_failed() {
            return Err(PipelineError::AllProvidersFailed {
                doc_id: doc.doc_id.0.clone(),
                prompts: extraction.batch.records.len(),
            });
        }
        store.put_document(doc)?;
        let run_id = store.next_run_id();
        let merged = self.merge(extraction, &run_id);
        let meta = RunMeta {
            mode: Some(mode_name(extraction.mode).to_string()),
            prompts: extraction.batch.records.len(),
            failed_prompts: extraction.batch.failed_count(),
            cost_usd: extraction.batch.total_cost_usd,
            wall_ms: extraction.batch.wall_latency.as_millis() as u64,
        };
        store.persist_run_with_meta(&run_id, &doc.doc_id, &merged, meta)?;
        Ok(RunSummary::from_entry(store.run(&run_id)?, &doc.title))
    }

    pub fn merge(&self, extraction: &Extraction, namespace: &str) -> Vec<MergedRequirement> {
        merge_with(
            &extraction.batch.records,
            &extraction.consensus_profiles,
            &self.config.merge_options(namespace),
            self.embedder.as_ref(),
        )
    }

    /// [`extract`](Self::extract) then [`commit`](Self::commit).
    pub async fn run_document(
        &self,
        store: &mut Store,
        document: Document,
    ) -> Result<RunSummary, PipelineError> {
        let extraction = self.extract(document).await;
        self.commit(store, &extraction)
    }
}

fn mode_name(mode: ExecutionMode) -> &'static str {
    match mode {
        ExecutionMode::Parallel => "parallel",
        ExecutionMode::Sequential => "sequential",
    }
}

/// Counts and cost of one persisted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub doc_id: String,
    pub title: String,
    pub mode: Option<String>,
    pub prompts: usize,
    pub failed_prompts: usize,
    pub total: usize,
    pub functional: usize,
    pub non_functional: usize,
    pub flagged: usize,
    pub pending: usize,
    pub cost_usd: f64,
    pub wall_ms: u64,
}

impl RunSummary {
    pub fn from_entry(run: &RunEntry, title: &str) -> Self {
        let of_type = |t: ReqType| {
            run.requirements
                .iter()
                .filter(|r| r.requirement.req_type == t)
                .count()
        };
        Self {
            run_id: run.run_id.clone(),
            doc_id: run.doc_id.0.clone(),
            title: title.to_string(),
            mode: run.meta.mode.clone(),
            prompts: run.meta.prompts,
            failed_prompts: run.meta.failed_prompts,
            total: run.requirements.len(),
            functional: of_type(ReqType::Functional),
            non_functional: of_type(ReqType::NonFunctional),
            flagged: run
                .requirements
                .iter()
                .filter(|r| r.requirement.flagged_for_review)
                .count(),
            pending: run.count_by_status(ReviewStatus::PendingReview),
            cost_usd: run.meta.cost_usd,
            wall_ms: run.meta.wall_ms,
        }
    }

    /// Functional / non-functional shares, e.g. `54.9% / 45.1%`.
    pub fn type_split(&self) -> String {
        type_split(self.functional, self.non_functional)
    }
}

/// Percentages of functional and non-functional items with one decimal.
pub fn type_split(functional: usize, non_functional: usize) -> String {
    let total = functional + non_functional;
    if total == 0 {
        return "N/A".to_string();
    }
    let pct = |n: usize| 100.0 * n as f64 / total as f64;
    format!("{:.1}% / {:.1}%", pct(functional), pct(non_functional))
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} ({})", self.run_id, self.doc_id, self.title)?;
        writeln!(
            f,
            "  requirements: {} (functional {} / non-functional {}: {})",
            self.total,
            self.functional,
            self.non_functional,
            self.type_split()
        )?;
        writeln!(f, "  flagged for review: {}", self.flagged)?;
        writeln!(
            f,
            "  prompts: {} ({} failed)",
            self.prompts, self.failed_prompts
        )?;
        write!(f, "  cost: ${:.6}", self.cost_usd)
    }
}

/// Totals over several runs.
pub fn summarize_runs(runs: &[RunSummary]) -> String {
    let functional: usize = runs.iter().map(|r| r.functional).sum();
    let non_functional: usize = runs.iter().map(|r| r.non_functional).sum();
    let flagged: usize = runs.iter().map(|r| r.flagged).sum();
    let cost: f64 = runs.iter().map(|r| r.cost_usd).sum();
    format!(
        "total: {} requirements, functional / non-functional {}, flagged {}, cost ${:.6}",
        functional + non_functional,
        type_split(functional, non_functional),
        flagged,
        cost
    )
}

/// Descriptive statistics of a stored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub total: usize,
    pub flagged: usize,
    pub flag_rate: f64,
    pub by_state: BTreeMap<String, usize>,
    pub distributions: Distributions,
    pub pegs_coverage: f64,
    pub cost_usd: f64,
    pub cost_per_requirement_usd: Option<f64>,
}

impl RunMetrics {
    pub fn from_entry(run: &RunEntry) -> Self {
        let merged: Vec<MergedRequirement> = run
            .requirements
            .iter()
            .map(|r| r.requirement.clone())
            .collect();
        let stats = crate::consensus::flag_rate(&merged);
        let mut by_state = BTreeMap::new();
        for r in &run.requirements {
            *by_state
                .entry(r.review.status.as_str().to_string())
                .or_insert(0) += 1;
        }
        Self {
            run_id: run.run_id.clone(),
            total: merged.len(),
            flagged: stats.flagged,
            flag_rate: stats.flagged_fraction,
            by_state,
            distributions: Distributions::from_merged(&merged),
            pegs_coverage: coverage_by_document(&merged),
            cost_usd: run.meta.cost_usd,
            cost_per_requirement_usd: (!merged.is_empty())
                .then(|| run.meta.cost_usd / merged.len() as f64),
        }
    }
}
