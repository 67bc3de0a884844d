//! Monte-Carlo simulation of how cross-provider agreement filters
//! hallucinated requirements.
//!
//! Each trial synthesizes a document's ground-truth requirements, lets every
//! provider recall each one independently, and adds per-provider
//! hallucinations sized so that a single provider's false-positive share is
//! about `fp_rate_single`. Each hallucination is echoed verbatim by every
//! other provider with probability `overlap_rate`. The candidates go through
//! the regular merge, and the report gives the false-positive share among
//! consensus-confirmed items (two or more providers) and among flagged items.

use std::collections::HashSet;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{MergeOptions, MergedRequirement};
use crate::ingest::DocId;
use crate::orchestrator::{ExecutionMode, RunRecord};
use crate::prompting::ChunkRef;
use crate::providers::{CandidateRequirement, Outcome, ProviderProfile, ProviderResponse};
use crate::taxonomy::{PegsCategory, Priority, ReqType};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("{name} must be within [0, 1], got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("{0} must be at least 1")]
    InvalidCount(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub n_items: usize,
    pub n_providers: usize,
    /// Target false-positive share of one provider's own output.
    pub fp_rate_single: f64,
    /// Probability that another provider repeats a given hallucination.
    pub overlap_rate: f64,
    /// Probability that a provider extracts a given true requirement.
    pub provider_recall: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            n_items: 20,
            n_providers: 3,
            fp_rate_single: 0.34,
            overlap_rate: 0.0,
            provider_recall: 0.9,
            trials: 10_000,
            seed: 42,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<(), SimulationError> {
        for (name, value) in [
            ("fp_rate_single", self.fp_rate_single),
            ("overlap_rate", self.overlap_rate),
            ("provider_recall", self.provider_recall),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimulationError::InvalidRate { name, value });
            }
        }
        if self.fp_rate_single >= 1.0 {
            return Err(SimulationError::InvalidRate {
                name: "fp_rate_single",
                value: self.fp_rate_single,
            });
        }
        if self.trials == 0 {
            return Err(SimulationError::InvalidCount("trials"));
        }
        if self.n_items == 0 {
            return Err(SimulationError::InvalidCount("n_items"));
        }
        if self.n_providers == 0 {
            return Err(SimulationError::InvalidCount("n_providers"));
        }
        Ok(())
    }

    /// Expected number of a provider's own (non-echoed) hallucinations given
    /// its true-positive count, so that own plus received echoes hit the
    /// target share.
    fn own_hallucinations(&self, true_positives: usize) -> f64 {
        let odds = self.fp_rate_single / (1.0 - self.fp_rate_single);
        let echo_factor = 1.0 + (self.n_providers as f64 - 1.0) * self.overlap_rate;
        odds * true_positives as f64 / echo_factor
    }
}

/// Point estimate with a 95% interval from batch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub params: SimulationParams,
    pub single_provider_fp_rate: Estimate,
    pub confirmed_fp_rate: Estimate,
    pub flagged_fp_rate: Estimate,
    pub confirmed_items: usize,
    pub confirmed_false_positives: usize,
    pub flagged_items: usize,
    pub flagged_false_positives: usize,
}

impl std::fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = |f: &mut std::fmt::Formatter<'_>, name: &str, e: &Estimate| {
            writeln!(
                f,
                "{name:<28} {:>6.1}%  (95% CI {:.1}% to {:.1}%)",
                100.0 * e.mean,
                100.0 * e.ci_low,
                100.0 * e.ci_high
            )
        };
        writeln!(
            f,
            "trials {}, providers {}, items per trial {}, overlap {:.4}, seed {}",
            self.params.trials,
            self.params.n_providers,
            self.params.n_items,
            self.params.overlap_rate,
            self.params.seed
        )?;
        row(f, "single-provider FP rate", &self.single_provider_fp_rate)?;
        row(f, "consensus-confirmed FP rate", &self.confirmed_fp_rate)?;
        row(f, "flagged FP rate", &self.flagged_fp_rate)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialCounts {
    single_fp: usize,
    single_total: usize,
    confirmed_fp: usize,
    confirmed: usize,
    flagged_fp: usize,
    flagged: usize,
}

impl std::ops::AddAssign for TrialCounts {
    fn add_assign(&mut self, o: Self) {
        self.single_fp += o.single_fp;
        self.single_total += o.single_total;
        self.confirmed_fp += o.confirmed_fp;
        self.confirmed += o.confirmed;
        self.flagged_fp += o.flagged_fp;
        self.flagged += o.flagged;
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "vo", "pe", "du", "ga", "zi", "bo", "fe", "hu", "ja",
    "ko", "le", "mu", "no", "pi", "ro", "se", "tu",
];

fn pseudo_sentence(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(6..=9);
    (0..words)
        .map(|_| {
            let n = rng.random_range(2..=4);
            (0..n)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_labels(rng: &mut ChaCha8Rng) -> (PegsCategory, ReqType) {
    let pegs = PegsCategory::ALL[rng.random_range(0..4)];
    let req_type = if rng.random_bool(0.5) {
        ReqType::Functional
    } else {
        ReqType::NonFunctional
    };
    (pegs, req_type)
}

fn provider_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("sim-{i}")).collect()
}

fn profiles(n: usize) -> Vec<ProviderProfile> {
    provider_ids(n)
        .into_iter()
        .enumerate()
        .map(|(i, id)| ProviderProfile::mock(id, i as u32))
        .collect()
}

struct Synthetic {
    record: RunRecord,
    hallucinations: HashSet<String>,
    single_fp: usize,
    single_total: usize,
}

fn synthesize(params: &SimulationParams, rng: &mut ChaCha8Rng, trial: usize) -> Synthetic {
    let ids = provider_ids(params.n_providers);
    let chunk_id = format!("sim-{trial}#s0c0");
    let candidate =
        |text: &str, labels: (PegsCategory, ReqType), provider: &str| CandidateRequirement {
            text: text.to_string(),
            req_type: labels.1,
            pegs: labels.0,
            priority: Priority::Medium,
            category_label: String::new(),
            self_confidence: 0.8,
            provider_id: provider.to_string(),
            chunk_id: chunk_id.clone(),
        };

    let truth: Vec<(String, (PegsCategory, ReqType))> = (0..params.n_items)
        .map(|_| (pseudo_sentence(rng), random_labels(rng)))
        .collect();
    let mut outputs: Vec<Vec<CandidateRequirement>> = vec![Vec::new(); ids.len()];
    let mut true_positives = vec![0usize; ids.len()];
    for (text, labels) in &truth {
        for (p, id) in ids.iter().enumerate() {
            if rng.random_bool(params.provider_recall) {
                outputs[p].push(candidate(text, *labels, id));
                true_positives[p] += 1;
            }
        }
    }

    let mut hallucinations = HashSet::new();
    let mut false_positives = vec![0usize; ids.len()];
    for p in 0..ids.len() {
        let expected = params.own_hallucinations(true_positives[p]);
        let mut count = expected.floor() as usize;
        if rng.random_bool(expected.fract()) {
            count += 1;
        }
        for _ in 0..count {
            let text = pseudo_sentence(rng);
            let labels = random_labels(rng);
            outputs[p].push(candidate(&text, labels, &ids[p]));
            false_positives[p] += 1;
            for (q, other) in ids.iter().enumerate() {
                if q != p && rng.random_bool(params.overlap_rate) {
                    outputs[q].push(candidate(&text, labels, other));
                    false_positives[q] += 1;
                }
            }
            hallucinations.insert(text);
        }
    }

    let per_provider = ids
        .iter()
        .zip(outputs)
        .map(|(id, candidates)| ProviderResponse {
            provider_id: id.clone(),
            candidates,
            input_tokens: 0,
            output_tokens: 0,
            latency: Duration::ZERO,
            outcome: Outcome::Ok,
            warnings: 0,
        })
        .collect();
    Synthetic {
        record: RunRecord {
            prompt_id: format!("sim-{trial}"),
            source: ChunkRef {
                doc_id: DocId(format!("sim-{trial}")),
                section_label: "§1".into(),
                page: 1,
                chunk_id,
            },
            per_provider,
            wall_latency: Duration::ZERO,
            mode_used: ExecutionMode::Parallel,
            failovers_taken: 0,
            accepted_provider: None,
            cost_usd: 0.0,
            all_failed: false,
        },
        hallucinations,
        single_fp: false_positives.iter().sum(),
        single_total: true_positives.iter().sum::<usize>() + false_positives.iter().sum::<usize>(),
    }
}

fn run_trial<M>(params: &SimulationParams, trial: usize, merge_fn: &M) -> TrialCounts
where
    M: Fn(&[RunRecord], &[ProviderProfile], &MergeOptions) -> Vec<MergedRequirement> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(trial as u64);
    let synthetic = synthesize(params, &mut rng, trial);
    let merged = merge_fn(
        std::slice::from_ref(&synthetic.record),
        &profiles(params.n_providers),
        &MergeOptions::default().with_namespace(format!("sim-{trial}")),
    );
    let mut counts = TrialCounts {
        single_fp: synthetic.single_fp,
        single_total: synthetic.single_total,
        ..Default::default()
    };
    for m in &merged {
        let is_fp = synthetic.hallucinations.contains(&m.text);
        if m.contributing_providers.len() >= 2 {
            counts.confirmed += 1;
            counts.confirmed_fp += usize::from(is_fp);
        }
        if m.flagged_for_review {
            counts.flagged += 1;
            counts.flagged_fp += usize::from(is_fp);
        }
    }
    counts
}

const BATCHES: usize = 20;

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn estimate(per_trial: &[TrialCounts], pick: impl Fn(&TrialCounts) -> (usize, usize)) -> Estimate {
    let (num, den) = per_trial
        .iter()
        .map(&pick)
        .fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    let mean = ratio(num, den);
    let batches = BATCHES.min(per_trial.len());
    if batches < 2 {
        return Estimate {
            mean,
            ci_low: mean,
            ci_high: mean,
        };
    }
    let size = per_trial.len() / batches;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches {
                per_trial.len()
            } else {
                (b + 1) * size
            };
            let (n, d) = per_trial[b * size..end]
                .iter()
                .map(&pick)
                .fold((0, 0), |(a, c), (x, y)| (a + x, c + y));
            ratio(n, d)
        })
        .collect();
    let m = batch_means.iter().sum::<f64>() / batches as f64;
    let var = batch_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let half = 1.96 * (var / batches as f64).sqrt();
    Estimate {
        mean,
        ci_low: (mean - half).max(0.0),
        ci_high: (mean + half).min(1.0),
    }
}

/// Run the simulation with the production merge.
pub fn simulate_hallucination(
    params: &SimulationParams,
) -> Result<SimulationReport, SimulationError> {
    simulate_with(params, crate::consensus::merge)
}

/// Run the simulation with a caller-supplied merge function, called once per
/// trial.
pub fn simulate_with<M>(
    params: &SimulationParams,
    merge_fn: M,
) -> Result<SimulationReport, SimulationError>
where
    M: Fn(&[RunRecord], &[ProviderProfile], &MergeOptions) -> Vec<MergedRequirement> + Sync,
{
    params.validate()?;
    let per_trial: Vec<TrialCounts> = (0..params.trials)
        .into_par_iter()
        .map(|t| run_trial(params, t, &merge_fn))
        .collect();
    let mut total = TrialCounts::default();
    for c in &per_trial {
        total += *c;
    }
    Ok(SimulationReport {
        params: *params,
        single_provider_fp_rate: estimate(&per_trial, |c| (c.single_fp, c.single_total)),
        confirmed_fp_rate: estimate(&per_trial, |c| (c.confirmed_fp, c.confirmed)),
        flagged_fp_rate: estimate(&per_trial, |c| (c.flagged_fp, c.flagged)),
        confirmed_items: total.confirmed,
        confirmed_false_positives: total.confirmed_fp,
        flagged_items: total.flagged,
        flagged_false_positives: total.flagged_fp,
    })
}

fn binomial_at_least(n: usize, p: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for j in k..=n {
        let mut c = 1.0;
        for i in 0..j {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        total += c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32);
    }
    total
}

/// Large-sample confirmed false-positive share predicted by the simulation
/// model: expected confirmed hallucinations over expected confirmed items.
pub fn expected_confirmed_fp_rate(params: &SimulationParams) -> f64 {
    let k = params.n_providers;
    let n = params.n_items as f64;
    let r = params.provider_recall;
    let q = params.overlap_rate;
    let confirmed_true = n * binomial_at_least(k, r, 2);
    let own = {
        let odds = params.fp_rate_single / (1.0 - params.fp_rate_single);
        odds * r * n / (1.0 + (k as f64 - 1.0) * q)
    };
    let confirmed_false = k as f64 * own * (1.0 - (1.0 - q).powi(k as i32 - 1));
    ratio_f(confirmed_false, confirmed_false + confirmed_true)
}

fn ratio_f(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Overlap rate whose expected confirmed false-positive share is closest to
/// `target`, by grid search with step 1e-4.
pub fn calibrate_overlap(params: &SimulationParams, target: f64) -> f64 {
    (0..=10_000)
        .map(|i| i as f64 / 10_000.0)
        .min_by(|a, b| {
            let fa = expected_confirmed_fp_rate(&SimulationParams {
                overlap_rate: *a,
                ..*params
            });
            let fb = expected_confirmed_fp_rate(&SimulationParams {
                overlap_rate: *b,
                ..*params
            });
            (fa - target).abs().total_cmp(&(fb - target).abs())
        })
        .unwrap_or(0.0)
}
