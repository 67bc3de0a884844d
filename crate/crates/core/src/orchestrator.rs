//! Prompt execution across the provider set.
//!
//! Parallel mode queries every enabled provider at once and keeps all
//! responses; wall latency tracks the slowest responder. Sequential mode walks
//! the failover chain and stops at the first response that is Ok with mean
//! self-confidence at or above the failover threshold.

use std::time::Duration;

use tokio::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{ChunkRef, PromptSpec};
use crate::providers::{
    response_cost, round_usd, validate_profiles, CandidateRequirement, Provider, ProviderError,
    ProviderProfile, ProviderResponse,
};

pub const DEFAULT_FAILOVER_THRESHOLD: f64 = 0.6;
pub const DEFAULT_COMPLEXITY_CUTOFF: f64 = 0.3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl std::str::FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "parallel" => Ok(ExecutionMode::Parallel),
            "sequential" => Ok(ExecutionMode::Sequential),
            other => Err(format!(
                "unknown mode {other:?} (expected parallel|sequential)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("every provider failed for prompt {}", record.prompt_id)]
    AllProvidersFailed { record: Box<RunRecord> },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0} must be within [0, 1]")]
    InvalidThreshold(&'static str),
    #[error("max_in_flight must be at least 1")]
    InvalidWorkerBound,
}

/// Result of running one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub prompt_id: String,
    pub source: ChunkRef,
    /// One response per queried provider, in failover-rank order.
    pub per_provider: Vec<ProviderResponse>,
    pub wall_latency: Duration,
    pub mode_used: ExecutionMode,
    pub failovers_taken: u32,
    /// Sequential mode: the provider whose answer was accepted.
    pub accepted_provider: Option<String>,
    pub cost_usd: f64,
    pub all_failed: bool,
}

impl RunRecord {
    /// Responses whose candidates feed consensus: every Ok response in
    /// Parallel mode, only the accepted one in Sequential mode.
    pub fn used_responses(&self) -> impl Iterator<Item = &ProviderResponse> {
        self.per_provider.iter().filter(move |r| {
            r.is_ok()
                && match self.mode_used {
                    ExecutionMode::Parallel => true,
                    ExecutionMode::Sequential => {
                        self.accepted_provider.as_deref() == Some(r.provider_id.as_str())
                    }
                }
        })
    }

    pub fn candidates(&self) -> impl Iterator<Item = &CandidateRequirement> {
        self.used_responses().flat_map(|r| r.candidates.iter())
    }

    pub fn ok_count(&self) -> usize {
        self.per_provider.iter().filter(|r| r.is_ok()).count()
    }

    pub fn provider_latency_sum(&self) -> Duration {
        self.per_provider.iter().map(|r| r.latency).sum()
    }
}

/// Aggregate of a batch of prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// One record per prompt, in prompt order.
    pub records: Vec<RunRecord>,
    pub total_cost_usd: f64,
    pub wall_latency: Duration,
    pub provider_latency_sum: Duration,
}

impl BatchReport {
    pub fn failed_count(&self) -> usize {
        self.records.iter().filter(|r| r.all_failed).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.all_failed)
    }
}

#[derive(Debug, Clone)]
pub struct OrchestrationPlan {
    pub mode: ExecutionMode,
    /// Enabled providers sorted by failover rank.
    pub providers: Vec<Provider>,
    pub low_confidence_failover_threshold: f64,
    pub cost_routing: bool,
    pub complexity_cutoff: f64,
    pub max_in_flight: usize,
}

impl OrchestrationPlan {
    /// Validate the profiles, drop disabled providers and order the rest by
    /// failover rank.
    pub fn new(mode: ExecutionMode, providers: Vec<Provider>) -> Result<Self, OrchestratorError> {
        let profiles: Vec<ProviderProfile> = providers.iter().map(|p| p.profile.clone()).collect();
        validate_profiles(&profiles)?;
        let mut providers: Vec<Provider> = providers
            .into_iter()
            .filter(|p| p.profile.enabled)
            .collect();
        providers.sort_by(|a, b| {
            a.profile
                .failover_rank
                .cmp(&b.profile.failover_rank)
                .then_with(|| a.id().cmp(b.id()))
        });
        Ok(Self {
            mode,
            providers,
            low_confidence_failover_threshold: DEFAULT_FAILOVER_THRESHOLD,
            cost_routing: false,
            complexity_cutoff: DEFAULT_COMPLEXITY_CUTOFF,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        })
    }

    pub fn with_failover_threshold(mut self, threshold: f64) -> Result<Self, OrchestratorError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(OrchestratorError::InvalidThreshold("failover threshold"));
        }
        self.low_confidence_failover_threshold = threshold;
        Ok(self)
    }

    pub fn with_cost_routing(
        mut self,
        enabled: bool,
        cutoff: f64,
    ) -> Result<Self, OrchestratorError> {
        if !(0.0..=1.0).contains(&cutoff) {
            return Err(OrchestratorError::InvalidThreshold("complexity cutoff"));
        }
        self.cost_routing = enabled;
        self.complexity_cutoff = cutoff;
        Ok(self)
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Result<Self, OrchestratorError> {
        if n == 0 {
            return Err(OrchestratorError::InvalidWorkerBound);
        }
        self.max_in_flight = n;
        Ok(self)
    }

    pub fn profiles(&self) -> Vec<ProviderProfile> {
        self.providers.iter().map(|p| p.profile.clone()).collect()
    }

    /// Providers to use for a document of the given complexity. With cost
    /// routing on, simple documents go to the single cheapest provider by
    /// input rate (ties broken by provider id).
    pub fn route_provider_subset(&self, doc_complexity: f64) -> Vec<Provider> {
        if !self.cost_routing || doc_complexity >= self.complexity_cutoff {
            return self.providers.clone();
        }
        self.providers
            .iter()
            .min_by(|a, b| {
                a.profile
                    .input_cost_per_1k_tokens
                    .total_cmp(&b.profile.input_cost_per_1k_tokens)
                    .then_with(|| a.id().cmp(b.id()))
            })
            .cloned()
            .into_iter()
            .collect()
    }

    /// Copy of this plan restricted to the routed provider subset.
    pub fn routed(&self, doc_complexity: f64) -> OrchestrationPlan {
        OrchestrationPlan {
            providers: self.route_provider_subset(doc_complexity),
            ..self.clone()
        }
    }

    fn cost_of(&self, responses: &[ProviderResponse]) -> f64 {
        let total: f64 = responses
            .iter()
            .filter_map(|r| {
                self.providers
                    .iter()
                    .find(|p| p.id() == r.provider_id)
                    .map(|p| response_cost(r, &p.profile))
            })
            .sum();
        round_usd(total)
    }

    pub async fn run_parallel(&self, prompt: &PromptSpec) -> Result<RunRecord, OrchestratorError> {
        let started = Instant::now();
        let calls = self
            .providers
            .iter()
            .map(|p| p.send_extraction(&prompt.rendered, prompt.chunk_id()));
        let per_provider = futures::future::join_all(calls).await;
        let wall_latency = started.elapsed();

        let all_failed = per_provider.iter().all(|r| !r.is_ok());
        let record = RunRecord {
            prompt_id: prompt.prompt_id.clone(),
            source: prompt.source.clone(),
            cost_usd: self.cost_of(&per_provider),
            per_provider,
            wall_latency,
            mode_used: ExecutionMode::Parallel,
            failovers_taken: 0,
            accepted_provider: None,
            all_failed,
        };
        if all_failed {
            return Err(OrchestratorError::AllProvidersFailed {
                record: Box::new(record),
            });
        }
        Ok(record)
    }

    pub async fn run_sequential(
        &self,
        prompt: &PromptSpec,
    ) -> Result<RunRecord, OrchestratorError> {
        let started = Instant::now();
        let mut per_provider = Vec::new();
        let mut accepted = None;
        for provider in &self.providers {
            let response = provider
                .send_extraction(&prompt.rendered, prompt.chunk_id())
                .await;
            let acceptable = response.is_ok()
                && response
                    .mean_confidence()
                    .is_none_or(|m| m >= self.low_confidence_failover_threshold);
            if !acceptable {
                tracing::debug!(
                    provider = provider.id(),
                    outcome = ?response.outcome,
                    "response not acceptable, failing over"
                );
            }
            per_provider.push(response);
            if acceptable {
                accepted = Some(provider.id().to_string());
                break;
            }
        }
        let wall_latency = started.elapsed();
        let attempts = per_provider.len() as u32;
        let all_failed = accepted.is_none();
        let record = RunRecord {
            prompt_id: prompt.prompt_id.clone(),
            source: prompt.source.clone(),
            cost_usd: self.cost_of(&per_provider),
            per_provider,
            wall_latency,
            mode_used: ExecutionMode::Sequential,
            failovers_taken: if all_failed {
                attempts.saturating_sub(1)
            } else {
                attempts - 1
            },
            accepted_provider: accepted,
            all_failed,
        };
        if all_failed {
            return Err(OrchestratorError::AllProvidersFailed {
                record: Box::new(record),
            });
        }
        Ok(record)
    }

    pub async fn run_prompt(&self, prompt: &PromptSpec) -> Result<RunRecord, OrchestratorError> {
        match self.mode {
            ExecutionMode::Parallel => self.run_parallel(prompt).await,
            ExecutionMode::Sequential => self.run_sequential(prompt).await,
        }
    }

    /// Run every prompt with at most `max_in_flight` prompts outstanding.
    /// Per-prompt failures are kept in the record list (`all_failed`).
    async fn run_recorded(&self, prompt: &PromptSpec) -> RunRecord {
        match self.run_prompt(prompt).await {
            Ok(record) => record,
            Err(OrchestratorError::AllProvidersFailed { record }) => *record,
            Err(other) => unreachable!("run_prompt only reports provider failure: {other}"),
        }
    }

    pub async fn execute_plan(&self, prompts: &[PromptSpec]) -> BatchReport {
        let started = Instant::now();
        let pending: Vec<_> = prompts.iter().map(|p| self.run_recorded(p)).collect();
        let records: Vec<RunRecord> = stream::iter(pending)
            .buffered(self.max_in_flight.max(1))
            .collect()
            .await;
        let wall_latency = started.elapsed();
        BatchReport {
            total_cost_usd: round_usd(records.iter().map(|r| r.cost_usd).sum()),
            provider_latency_sum: records.iter().map(|r| r.provider_latency_sum()).sum(),
            records,
            wall_latency,
        }
    }
}
