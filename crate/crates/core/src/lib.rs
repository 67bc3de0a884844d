//! Multi-provider requirements extraction with weighted consensus.
//!
//! Documents are split into traceable chunks, each chunk is prompted once per
//! PEGS category against several language-model providers, and the candidate
//! requirements are deduplicated and scored by weighted cross-provider
//! agreement. Low-agreement items are flagged for human review before export.

pub mod config;
pub mod consensus;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod prompting;
pub mod providers;
pub mod simulate;
pub mod store;
pub mod taxonomy;

pub use consensus::{merge, MergeOptions, MergedRequirement};
pub use ingest::{Chunk, DocId, Document};
pub use orchestrator::{ExecutionMode, OrchestrationPlan, RunRecord};
pub use providers::{CandidateRequirement, Provider, ProviderProfile};
pub use taxonomy::{PegsCategory, Priority, ReqType};
