//! Completion providers and the candidate-requirement output contract.
//!
//! Every provider, remote or scripted, is driven through [`Provider::send_extraction`],
//! which never fails: transport problems, timeouts and unparseable replies are
//! all encoded in [`Outcome`] so the orchestrator can keep every response.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::estimate_tokens;
use crate::taxonomy::{PegsCategory, Priority, ReqType};

pub const MIN_WEIGHT: f64 = 0.1;
pub const MAX_WEIGHT: f64 = 2.0;

/// Slack allowed on top of a profile's timeout before a call must have returned.
pub const TIMEOUT_GRACE: Duration = Duration::from_millis(100);

/// Shortest requirement text accepted from a provider, in characters.
pub const MIN_CANDIDATE_CHARS: usize = 10;

pub const DEFAULT_SELF_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider {id}: weight {weight} outside [{MIN_WEIGHT}, {MAX_WEIGHT}]")]
    InvalidWeight { id: String, weight: f64 },
    #[error("providers {a} and {b} share failover rank {rank}")]
    DuplicateRank { a: String, b: String, rank: u32 },
    #[error("duplicate provider id {0}")]
    DuplicateId(String),
    #[error("no enabled providers")]
    NoProviders,
    #[error("provider {0}: scripted mock needs a script file")]
    MissingScript(String),
    #[error("provider {id}: missing environment variable {var}")]
    MissingCredential { id: String, var: String },
    #[error("provider {id}: invalid cost rate {rate}")]
    InvalidRate { id: String, rate: f64 },
    #[error("failed to read mock script {path}: {source}")]
    ScriptIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid mock script: {0}")]
    ScriptParse(#[from] serde_json::Error),
    #[error("http client setup failed: {0}")]
    Client(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[serde(alias = "openai")]
    OpenAiCompatible,
    #[serde(alias = "anthropic")]
    AnthropicStyle,
    #[serde(alias = "mock")]
    ScriptedMock,
}

fn default_weight() -> f64 {
    1.0
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_enabled() -> bool {
    true
}

/// Static description of one provider: identity, consensus weight, pricing,
/// timeout and position in the failover chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub provider_id: String,
    pub kind: ProviderKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub input_cost_per_1k_tokens: f64,
    #[serde(default)]
    pub output_cost_per_1k_tokens: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub failover_rank: u32,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Reply script for `ScriptedMock` providers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl ProviderProfile {
    pub fn new(provider_id: impl Into<String>, kind: ProviderKind) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind,
            weight: default_weight(),
            input_cost_per_1k_tokens: 0.0,
            output_cost_per_1k_tokens: 0.0,
            timeout_ms: default_timeout_ms(),
            failover_rank: 0,
            enabled: true,
            model: None,
            base_url: None,
            script: None,
        }
    }

    pub fn mock(provider_id: impl Into<String>, failover_rank: u32) -> Self {
        Self {
            failover_rank,
            ..Self::new(provider_id, ProviderKind::ScriptedMock)
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_rates(mut self, input_per_1k: f64, output_per_1k: f64) -> Self {
        self.input_cost_per_1k_tokens = input_per_1k;
        self.output_cost_per_1k_tokens = output_per_1k;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_ms = timeout.as_millis() as u64;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Suffix used in `REQFUSION_<ID>_API_KEY` style variables.
    pub fn env_key(&self) -> String {
        self.provider_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect()
    }
}

/// Check weights, rates and failover ranks across the enabled providers.
pub fn validate_profiles(profiles: &[ProviderProfile]) -> Result<(), ProviderError> {
    let enabled: Vec<_> = profiles.iter().filter(|p| p.enabled).collect();
    if enabled.is_empty() {
        return Err(ProviderError::NoProviders);
    }
    let mut ids = HashSet::new();
    for p in profiles {
        if !ids.insert(p.provider_id.as_str()) {
            return Err(ProviderError::DuplicateId(p.provider_id.clone()));
        }
    }
    for p in &enabled {
        if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&p.weight) {
            return Err(ProviderError::InvalidWeight {
                id: p.provider_id.clone(),
                weight: p.weight,
            });
        }
        for rate in [p.input_cost_per_1k_tokens, p.output_cost_per_1k_tokens] {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(ProviderError::InvalidRate {
                    id: p.provider_id.clone(),
                    rate,
                });
            }
        }
    }
    for (i, a) in enabled.iter().enumerate() {
        if let Some(b) = enabled[i + 1..]
            .iter()
            .find(|b| b.failover_rank == a.failover_rank)
        {
            return Err(ProviderError::DuplicateRank {
                a: a.provider_id.clone(),
                b: b.provider_id.clone(),
                rank: a.failover_rank,
            });
        }
    }
    Ok(())
}

/// One requirement as extracted by one provider from one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRequirement {
    pub text: String,
    pub req_type: ReqType,
    pub pegs: PegsCategory,
    pub priority: Priority,
    pub category_label: String,
    pub self_confidence: f64,
    pub provider_id: String,
    pub chunk_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Ok,
    Timeout,
    /// Status 0 means the request never produced an HTTP status (connection
    /// refused, DNS failure, malformed envelope).
    HttpError(u16),
    ParseError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub provider_id: String,
    pub candidates: Vec<CandidateRequirement>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency: Duration,
    pub outcome: Outcome,
    /// Entries dropped by field validation.
    #[serde(default)]
    pub warnings: usize,
}

impl ProviderResponse {
    pub fn is_ok(&self) -> bool {
        self.outcome == Outcome::Ok
    }

    /// Mean self-confidence of the candidates; `None` for an empty list.
    pub fn mean_confidence(&self) -> Option<f64> {
        if self.candidates.is_empty() {
            return None;
        }
        let sum: f64 = self.candidates.iter().map(|c| c.self_confidence).sum();
        Some(sum / self.candidates.len() as f64)
    }

    fn failed(provider_id: &str, outcome: Outcome, latency: Duration) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            candidates: Vec::new(),
            input_tokens: 0,
            output_tokens: 0,
            latency,
            outcome,
            warnings: 0,
        }
    }
}

/// Round non-negative amounts half-up to 6 decimals.
pub fn round_usd(amount: f64) -> f64 {
    ((amount * 1e6) + 0.5 + 1e-7).floor() / 1e6
}

/// USD cost of a response under the profile's token rates.
pub fn response_cost(response: &ProviderResponse, profile: &ProviderProfile) -> f64 {
    round_usd(
        response.input_tokens as f64 / 1000.0 * profile.input_cost_per_1k_tokens
            + response.output_tokens as f64 / 1000.0 * profile.output_cost_per_1k_tokens,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no structured requirement list found in provider output")]
pub struct ParseError;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCandidates {
    pub candidates: Vec<CandidateRequirement>,
    pub warnings: usize,
}

/// Extract candidates from a raw model reply.
///
/// The first JSON array (or object carrying a `requirements` array) found in
/// the text is used; surrounding prose and code fences are ignored. Entries
/// that fail validation are dropped and counted in `warnings`.
pub fn parse_candidates(
    raw_text: &str,
    provider_id: &str,
    chunk_id: &str,
) -> Result<ParsedCandidates, ParseError> {
    let entries = find_structured_block(raw_text).ok_or(ParseError)?;
    let mut candidates = Vec::with_capacity(entries.len());
    let mut warnings = 0;
    for entry in &entries {
        match validate_entry(entry, provider_id, chunk_id) {
            Some(c) => candidates.push(c),
            None => warnings += 1,
        }
    }
    Ok(ParsedCandidates {
        candidates,
        warnings,
    })
}

fn find_structured_block(raw: &str) -> Option<Vec<Value>> {
    for (i, c) in raw.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        match value {
            Value::Array(items) => return Some(items),
            Value::Object(mut map) => {
                for key in ["requirements", "candidates"] {
                    if let Some(Value::Array(items)) = map.remove(key) {
                        return Some(items);
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn validate_entry(
    entry: &Value,
    provider_id: &str,
    chunk_id: &str,
) -> Option<CandidateRequirement> {
    let obj = entry.as_object()?;
    let text = obj.get("text")?.as_str()?.trim();
    if text.chars().count() < MIN_CANDIDATE_CHARS {
        return None;
    }
    let req_type = obj.get("type")?.as_str()?.parse().ok()?;
    let pegs = obj.get("pegs")?.as_str()?.parse().ok()?;
    let priority = match obj.get("priority") {
        None | Some(Value::Null) => Priority::Medium,
        Some(v) => v.as_str()?.parse().ok()?,
    };
    let category_label = match obj.get("category") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v.as_str()?.trim().to_string(),
    };
    let self_confidence = match obj.get("confidence") {
        None | Some(Value::Null) => DEFAULT_SELF_CONFIDENCE,
        Some(v) => {
            let c = v.as_f64()?;
            if !(0.0..=1.0).contains(&c) {
                return None;
            }
            c
        }
    };
    Some(CandidateRequirement {
        text: text.to_string(),
        req_type,
        pegs,
        priority,
        category_label,
        self_confidence,
        provider_id: provider_id.to_string(),
        chunk_id: chunk_id.to_string(),
    })
}

/// Render candidates in the output contract that [`parse_candidates`] reads.
pub fn serialize_candidates(candidates: &[CandidateRequirement]) -> String {
    let items: Vec<Value> = candidates
        .iter()
        .map(|c| {
            json!({
                "text": c.text,
                "type": c.req_type.as_str(),
                "pegs": c.pegs.name(),
                "priority": c.priority.as_str(),
                "category": c.category_label,
                "confidence": c.self_confidence,
            })
        })
        .collect();
    serde_json::to_string_pretty(&Value::Array(items)).expect("json values serialize")
}

/// Raw text returned by a completion endpoint plus any usage it reported.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCompletion {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("http status {0}")]
    Http(u16),
    #[error("transport failure: {0}")]
    Network(String),
}

#[async_trait]
pub trait CompletionClient: Send + Sync {
    async fn complete(&self, prompt: &str) -> Result<RawCompletion, TransportError>;
}

/// A configured provider: profile plus the client that reaches it.
#[derive(Clone)]
pub struct Provider {
    pub profile: ProviderProfile,
    client: Arc<dyn CompletionClient>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("profile", &self.profile)
            .finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(profile: ProviderProfile, client: Arc<dyn CompletionClient>) -> Self {
        Self { profile, client }
    }

    pub fn id(&self) -> &str {
        &self.profile.provider_id
    }

    /// Build a provider from its profile. Mock script paths are resolved
    /// against `base_dir`; remote providers read credentials from the
    /// environment.
    pub fn from_profile(profile: ProviderProfile, base_dir: &Path) -> Result<Self, ProviderError> {
        let client: Arc<dyn CompletionClient> = match profile.kind {
            ProviderKind::ScriptedMock => {
                let rel = profile
                    .script
                    .as_ref()
                    .ok_or_else(|| ProviderError::MissingScript(profile.provider_id.clone()))?;
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                };
                Arc::new(ScriptedMock::new(MockScript::load(&path)?))
            }
            ProviderKind::OpenAiCompatible | ProviderKind::AnthropicStyle => {
                let key_var = format!("REQFUSION_{}_API_KEY", profile.env_key());
                let url_var = format!("REQFUSION_{}_BASE_URL", profile.env_key());
                let api_key =
                    std::env::var(&key_var).map_err(|_| ProviderError::MissingCredential {
                        id: profile.provider_id.clone(),
                        var: key_var.clone(),
                    })?;
                let base_url = std::env::var(&url_var)
                    .ok()
                    .or_else(|| profile.base_url.clone())
                    .unwrap_or_else(|| match profile.kind {
                        ProviderKind::AnthropicStyle => "https://api.anthropic.com".to_string(),
                        _ => "https://api.openai.com".to_string(),
                    });
                let model = profile.model.clone().unwrap_or_default();
                let http = HttpEndpoint::new(base_url, api_key, model, profile.timeout())?;
                match profile.kind {
                    ProviderKind::AnthropicStyle => Arc::new(AnthropicClient(http)),
                    _ => Arc::new(OpenAiClient(http)),
                }
            }
        };
        Ok(Self::new(profile, client))
    }

    /// Send one extraction prompt. Never fails; the result is in `outcome`.
    pub async fn send_extraction(&self, prompt_text: &str, chunk_id: &str) -> ProviderResponse {
        let id = self.id();
        let started = Instant::now();
        let reply =
            tokio::time::timeout(self.profile.timeout(), self.client.complete(prompt_text)).await;
        let latency = started.elapsed();

        let raw = match reply {
            Err(_) => return ProviderResponse::failed(id, Outcome::Timeout, latency),
            Ok(Err(TransportError::Http(code))) => {
                tracing::warn!(provider = id, code, "provider returned an http error");
                return ProviderResponse::failed(id, Outcome::HttpError(code), latency);
            }
            Ok(Err(TransportError::Network(msg))) => {
                tracing::warn!(provider = id, error = %msg, "provider unreachable");
                return ProviderResponse::failed(id, Outcome::HttpError(0), latency);
            }
            Ok(Ok(raw)) => raw,
        };

        let input_tokens = raw
            .input_tokens
            .unwrap_or_else(|| estimate_tokens(prompt_text) as u64);
        let output_tokens = raw
            .output_tokens
            .unwrap_or_else(|| estimate_tokens(&raw.text) as u64);

        match parse_candidates(&raw.text, id, chunk_id) {
            Ok(parsed) => ProviderResponse {
                provider_id: id.to_string(),
                candidates: parsed.candidates,
                input_tokens,
                output_tokens,
                latency,
                outcome: Outcome::Ok,
                warnings: parsed.warnings,
            },
            Err(ParseError) => ProviderResponse {
                input_tokens,
                output_tokens,
                ..ProviderResponse::failed(id, Outcome::ParseError, latency)
            },
        }
    }
}

fn default_status() -> u16 {
    200
}

/// One scripted reply. Entries with a non-empty `when` list are keyed: they
/// answer any prompt containing every listed substring and are never
/// consumed. Entries without `when` are replayed in order, cycling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default = "default_status")]
    pub status: u16,
    /// Reply text. A non-string JSON value is sent as its serialization.
    pub body: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub when: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl MockEntry {
    pub fn ok(body: impl Into<Value>) -> Self {
        Self {
            delay_ms: 0,
            status: 200,
            body: body.into(),
            when: Vec::new(),
            input_tokens: None,
            output_tokens: None,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            ..Self::ok("")
        }
    }

    pub fn delayed(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }

    pub fn when<I, S>(mut self, patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.when = patterns.into_iter().map(Into::into).collect();
        self
    }

    pub fn tokens(mut self, input: u64, output: u64) -> Self {
        self.input_tokens = Some(input);
        self.output_tokens = Some(output);
        self
    }

    fn body_text(&self) -> String {
        match &self.body {
            Value::String(s) => s.clone(),
            other => serde_json::to_string(other).expect("json values serialize"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProviderError::ScriptIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Deterministic stand-in for a remote provider.
#[derive(Debug)]
pub struct ScriptedMock {
    script: MockScript,
    cursor: Mutex<usize>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursor: Mutex::new(0),
        }
    }

    fn select(&self, prompt: &str) -> Option<&MockEntry> {
        let keyed = self
            .script
            .entries
            .iter()
            .find(|e| !e.when.is_empty() && e.when.iter().all(|p| prompt.contains(p.as_str())));
        if keyed.is_some() {
            return keyed;
        }
        let sequential: Vec<&MockEntry> = self
            .script
            .entries
            .iter()
            .filter(|e| e.when.is_empty())
            .collect();
        if sequential.is_empty() {
            return None;
        }
        let mut cursor = self.cursor.lock().expect("mock cursor poisoned");
        let entry = sequential[*cursor % sequential.len()];
        *cursor += 1;
        Some(entry)
    }
}

#[async_trait]
impl CompletionClient for ScriptedMock {
    async fn complete(&self, prompt: &str) -> Result<RawCompletion, TransportError> {
        let Some(entry) = self.select(prompt) else {
            return Err(TransportError::Http(404));
        };
        if entry.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(entry.delay_ms)).await;
        }
        if !(200..300).contains(&entry.status) {
            return Err(TransportError::Http(entry.status));
        }
        Ok(RawCompletion {
            text: entry.body_text(),
            input_tokens: entry.input_tokens,
            output_tokens: entry.output_tokens,
        })
    }
}

struct HttpEndpoint {
    http: reqwest::Client,
    base_url: String,
    api_key: String,
    model: String,
}

impl HttpEndpoint {
    fn new(
        base_url: String,
        api_key: String,
        model: String,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let http = reqwest::Client::builder()
            .timeout(timeout + TIMEOUT_GRACE)
            .build()
            .map_err(|e| ProviderError::Client(e.to_string()))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model,
        })
    }

    async fn post(
        &self,
        path: &str,
        req: reqwest::RequestBuilder,
    ) -> Result<Value, TransportError> {
        let resp = req.send().await.map_err(|e| match e.status() {
            Some(s) => TransportError::Http(s.as_u16()),
            None => TransportError::Network(e.to_string()),
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Http(status.as_u16()));
        }
        resp.json::<Value>()
            .await
            .map_err(|e| TransportError::Network(format!("{path}: {e}")))
    }
}

/// Client for `POST {base}/v1/chat/completions` (OpenAI, Groq, and compatible hosts).
pub struct OpenAiClient(HttpEndpoint);

impl OpenAiClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        HttpEndpoint::new(base_url.into(), api_key.into(), model.into(), timeout).map(Self)
    }
}

#[async_trait]
impl CompletionClient for OpenAiClient {
    async fn complete(&self, prompt: &str) -> Result<RawCompletion, TransportError> {
        let ep = &self.0;
        let body = json!({
            "model": ep.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let req = ep
            .http
            .post(format!("{}/v1/chat/completions", ep.base_url))
            .bearer_auth(&ep.api_key)
            .json(&body);
        let v = ep.post("chat/completions", req).await?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                TransportError::Network("response missing choices[0].message.content".into())
            })?
            .to_string();
        Ok(RawCompletion {
            text,
            input_tokens: v["usage"]["prompt_tokens"].as_u64(),
            output_tokens: v["usage"]["completion_tokens"].as_u64(),
        })
    }
}

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Client for `POST {base}/v1/messages`.
pub struct AnthropicClient(HttpEndpoint);

impl AnthropicClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        HttpEndpoint::new(base_url.into(), api_key.into(), model.into(), timeout).map(Self)
    }
}

#[async_trait]
impl CompletionClient for AnthropicClient {
    async fn complete(&self, prompt: &str) -> Result<RawCompletion, TransportError> {
        let ep = &self.0;
        let body = json!({
            "model": ep.model,
            "max_tokens": 4096,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let req = ep
            .http
            .post(format!("{}/v1/messages", ep.base_url))
            .header("x-api-key", &ep.api_key)
            .header("anthropic-version", ANTHROPIC_VERSION)
            .json(&body);
        let v = ep.post("messages", req).await?;
        let text: String = v["content"]
            .as_array()
            .ok_or_else(|| TransportError::Network("response missing content blocks".into()))?
            .iter()
            .filter_map(|block| block["text"].as_str())
            .collect();
        Ok(RawCompletion {
            text,
            input_tokens: v["usage"]["input_tokens"].as_u64(),
            output_tokens: v["usage"]["output_tokens"].as_u64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(text: &str, pegs: &str) -> Value {
        json!({"text": text, "type": "functional", "pegs": pegs, "priority": "High",
               "category": "Security", "confidence": 0.9})
    }

    fn mock_provider(entries: Vec<MockEntry>, timeout_ms: u64) -> Provider {
        let profile = ProviderProfile::mock("m", 0).with_timeout(Duration::from_millis(timeout_ms));
        Provider::new(
            profile,
            Arc::new(ScriptedMock::new(MockScript::new(entries))),
        )
    }

    #[test]
    fn drops_invalid_entries_with_warning() {
        let payload = json!([
            entry("The system shall log every access.", "System"),
            entry("Budget must not exceed 2M EUR.", "Project"),
            {"type": "functional", "pegs": "System"},
        ]);
        let parsed = parse_candidates(&payload.to_string(), "p", "c").unwrap();
        assert_eq!(parsed.candidates.len(), 2);
        assert_eq!(parsed.warnings, 1);
    }

    #[test]
    fn fenced_payload_parses_like_unfenced() {
        let payload = json!([entry("The system shall log every access.", "System")]).to_string();
        let fenced = format!("Here are the requirements:\n```json\n{payload}\n```\nDone.");
        assert_eq!(
            parse_candidates(&payload, "p", "c").unwrap(),
            parse_candidates(&fenced, "p", "c").unwrap()
        );
    }

    #[test]
    fn skips_bracketed_prose_before_the_block() {
        let raw = format!(
            "Note [draft] {{not json}} then {}",
            json!({"requirements": [entry("Operators shall be trained yearly.", "Project")]})
        );
        let parsed = parse_candidates(&raw, "p", "c").unwrap();
        assert_eq!(parsed.candidates[0].pegs, PegsCategory::Project);
    }

    #[test]
    fn missing_block_is_parse_error() {
        assert_eq!(
            parse_candidates("no requirements here", "p", "c"),
            Err(ParseError)
        );
    }

    #[test]
    fn validation_rules() {
        let payload = json!([
            {"text": "  short  ", "type": "functional", "pegs": "System"},
            {"text": "The portal shall support SSO login.", "type": "functional", "pegs": "System"},
            {"text": "The portal shall support SSO login.", "type": "functional", "pegs": "System", "confidence": 1.5},
            {"text": "The portal shall support SSO login.", "type": "weird", "pegs": "System"},
        ]);
        let parsed = parse_candidates(&payload.to_string(), "p", "c").unwrap();
        assert_eq!(parsed.candidates.len(), 1);
        assert_eq!(parsed.warnings, 3);
        let c = &parsed.candidates[0];
        assert_eq!(c.self_confidence, DEFAULT_SELF_CONFIDENCE);
        assert_eq!(c.priority, Priority::Medium);
        assert_eq!(c.category_label, "");
    }

    #[test]
    fn cost_examples() {
        let profile = ProviderProfile::mock("gpt", 0).with_rates(0.03, 0.06);
        let mut resp = ProviderResponse::failed("gpt", Outcome::Ok, Duration::ZERO);
        resp.input_tokens = 1000;
        assert_eq!(format!("{:.6}", response_cost(&resp, &profile)), "0.030000");
        resp.input_tokens = 0;
        assert_eq!(response_cost(&resp, &profile), 0.0);

        let sonnet = ProviderProfile::mock("claude", 1).with_rates(0.003, 0.015);
        resp.input_tokens = 2000;
        resp.output_tokens = 500;
        assert_eq!(format!("{:.6}", response_cost(&resp, &sonnet)), "0.013500");
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_usd(0.0000005), 0.000001);
        assert_eq!(round_usd(0.00000049), 0.0);
        assert_eq!(round_usd(1.2345674), 1.234567);
    }

    #[test]
    fn profile_validation() {
        let ok = vec![ProviderProfile::mock("a", 0), ProviderProfile::mock("b", 1)];
        assert!(validate_profiles(&ok).is_ok());

        let heavy = vec![ProviderProfile::mock("a", 0).with_weight(2.5)];
        assert!(matches!(
            validate_profiles(&heavy),
            Err(ProviderError::InvalidWeight { .. })
        ));

        let clash = vec![ProviderProfile::mock("a", 1), ProviderProfile::mock("b", 1)];
        assert!(matches!(
            validate_profiles(&clash),
            Err(ProviderError::DuplicateRank { .. })
        ));

        let mut disabled = ProviderProfile::mock("b", 1);
        disabled.enabled = false;
        assert!(validate_profiles(&[ProviderProfile::mock("a", 1), disabled.clone()]).is_ok());
        assert!(matches!(
            validate_profiles(&[disabled]),
            Err(ProviderError::NoProviders)
        ));
    }

    #[test]
    fn env_key_is_shell_safe() {
        let p = ProviderProfile::new("groq-llama.3", ProviderKind::OpenAiCompatible);
        assert_eq!(p.env_key(), "GROQ_LLAMA_3");
    }

    #[tokio::test]
    async fn mock_replays_three_candidates() {
        let body = json!([
            entry("The system shall log every access.", "System"),
            entry("The operator shall review logs weekly.", "Project"),
            entry("The service shall comply with GDPR.", "Environment"),
        ]);
        let p = mock_provider(vec![MockEntry::ok(body)], 1000);
        let resp = p.send_extraction("prompt", "c1").await;
        assert_eq!(resp.outcome, Outcome::Ok);
        assert_eq!(resp.candidates.len(), 3);
        assert!(resp
            .candidates
            .iter()
            .all(|c| c.chunk_id == "c1" && c.provider_id == "m"));
    }

    #[tokio::test(start_paused = true)]
    async fn slow_mock_times_out() {
        let p = mock_provider(vec![MockEntry::ok("[]").delayed(500)], 100);
        let resp = p.send_extraction("prompt", "c1").await;
        assert_eq!(resp.outcome, Outcome::Timeout);
        assert!(resp.candidates.is_empty());
        assert!(resp.latency < Duration::from_millis(100) + TIMEOUT_GRACE);
    }

    #[tokio::test]
    async fn malformed_payload_is_parse_error() {
        let p = mock_provider(vec![MockEntry::ok("I could not find anything.")], 1000);
        assert_eq!(
            p.send_extraction("x", "c").await.outcome,
            Outcome::ParseError
        );
    }

    #[tokio::test]
    async fn http_status_is_encoded() {
        let p = mock_provider(vec![MockEntry::status(503)], 1000);
        assert_eq!(
            p.send_extraction("x", "c").await.outcome,
            Outcome::HttpError(503)
        );
    }

    #[tokio::test]
    async fn keyed_entries_win_and_sequential_cycles() {
        let entries = vec![
            MockEntry::ok("[]").when(["alpha"]),
            MockEntry::status(500),
            MockEntry::status(502),
        ];
        let p = mock_provider(entries, 1000);
        assert_eq!(
            p.send_extraction("has alpha", "c").await.outcome,
            Outcome::Ok
        );
        assert_eq!(
            p.send_extraction("x", "c").await.outcome,
            Outcome::HttpError(500)
        );
        assert_eq!(
            p.send_extraction("x", "c").await.outcome,
            Outcome::HttpError(502)
        );
        assert_eq!(
            p.send_extraction("x", "c").await.outcome,
            Outcome::HttpError(500)
        );
    }

    #[test]
    fn mock_script_file_format() {
        let script = MockScript::from_json(
            r#"[{"delay_ms": 5, "status": 200, "body": "[]"},
                {"status": 429, "body": ""}]"#,
        )
        .unwrap();
        assert_eq!(script.entries.len(), 2);
        assert_eq!(script.entries[1].status, 429);
    }
}
