#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use reqfusion_core::config::RunConfig;
use reqfusion_core::ingest::{load_document, DocFormat, DocId, Document};
use reqfusion_core::orchestrator::{ExecutionMode, RunRecord};
use reqfusion_core::prompting::ChunkRef;
use reqfusion_core::providers::{
    CandidateRequirement, MockEntry, MockScript, Outcome, Provider, ProviderProfile,
    ProviderResponse, ScriptedMock,
};
use reqfusion_core::taxonomy::{PegsCategory, Priority, ReqType};
use serde_json::json;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn fixture_text(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn load_config(rel: &str) -> RunConfig {
    RunConfig::load(&fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn markdown(text: &str, title: &str) -> Document {
    load_document(text.as_bytes(), DocFormat::Markdown, title, None).unwrap()
}

/// JSON reply in the extraction output contract.
pub fn reply(items: &[(&str, &str, &str, f64)]) -> String {
    let v: Vec<_> = items
        .iter()
        .map(|(text, ty, pegs, conf)| {
            json!({"text": text, "type": ty, "pegs": pegs, "priority": "Medium", "confidence": conf})
        })
        .collect();
    serde_json::to_string(&v).unwrap()
}

pub fn scripted(id: &str, rank: u32, entries: Vec<MockEntry>) -> Provider {
    scripted_profile(ProviderProfile::mock(id, rank), entries)
}

pub fn scripted_profile(profile: ProviderProfile, entries: Vec<MockEntry>) -> Provider {
    Provider::new(
        profile,
        Arc::new(ScriptedMock::new(MockScript::new(entries))),
    )
}

pub fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

pub fn cand(
    text: &str,
    provider: &str,
    pegs: PegsCategory,
    req_type: ReqType,
) -> CandidateRequirement {
    CandidateRequirement {
        text: text.to_string(),
        req_type,
        pegs,
        priority: Priority::Medium,
        category_label: String::new(),
        self_confidence: 0.8,
        provider_id: provider.to_string(),
        chunk_id: "doc-test#s0c0".to_string(),
    }
}

pub fn ok_response(provider: &str, candidates: Vec<CandidateRequirement>) -> ProviderResponse {
    ProviderResponse {
        provider_id: provider.to_string(),
        candidates,
        input_tokens: 0,
        output_tokens: 0,
        latency: Duration::ZERO,
        outcome: Outcome::Ok,
        warnings: 0,
    }
}

/// Parallel-mode record for one chunk with the given provider answers.
pub fn record(per_provider: Vec<ProviderResponse>) -> RunRecord {
    RunRecord {
        prompt_id: "doc-test#s0c0/S".to_string(),
        source: ChunkRef {
            doc_id: DocId("doc-test".to_string()),
            section_label: "Scope".to_string(),
            page: 3,
            chunk_id: "doc-test#s0c0".to_string(),
        },
        per_provider,
        wall_latency: Duration::ZERO,
        mode_used: ExecutionMode::Parallel,
        failovers_taken: 0,
        accepted_provider: None,
        cost_usd: 0.0,
        all_failed: false,
    }
}

pub fn equal_profiles(ids: &[&str]) -> Vec<ProviderProfile> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| ProviderProfile::mock(*id, i as u32))
        .collect()
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "vo", "pe", "du", "ga", "zi", "bo", "fe", "hu", "ja",
    "ko", "le", "mu", "no",
];

/// Random pseudo-word sentence; distinct sentences are far below the
/// deduplication threshold.
pub fn pseudo_sentence(rng: &mut impl rand::Rng) -> String {
    let words = rng.random_range(6..=9);
    let body: Vec<String> = (0..words)
        .map(|_| {
            (0..rng.random_range(2..=4))
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect()
        })
        .collect();
    format!("The system shall {}", body.join(" "))
}

/// Every requirement text in the fixture mock scripts under `dir`.
pub fn script_texts(dir: &str) -> Vec<String> {
    let mut out = Vec::new();
    for name in ["gpt4", "claude", "groq"] {
        let script: serde_json::Value =
            serde_json::from_str(&fixture_text(&format!("{dir}/scripts/{name}.json"))).unwrap();
        for entry in script.as_array().unwrap() {
            for item in entry["body"].as_array().into_iter().flatten() {
                out.push(item["text"].as_str().unwrap().to_string());
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
