//! Command-line surface.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reqfusion_core::orchestrator::ExecutionMode;
use reqfusion_core::prompting::PlanMode;
use reqfusion_core::store::{Decision, ExportFormat, ReviewStatus};
use reqfusion_core::taxonomy::PegsCategory;

#[derive(Debug, Parser)]
#[command(
    name = "reqfusion",
    version,
    about = "Multi-provider requirements extraction"
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, env = "REQFUSION_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory; overrides the `store` entry of the configuration.
    #[arg(long, global = true, env = "REQFUSION_STORE")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract, merge and persist requirements from documents.
    Extract(ExtractArgs),
    /// Serve the HTTP interface.
    Serve(ServeArgs),
    /// List persisted runs.
    Runs,
    /// Write the final requirements of a run.
    Export(ExportArgs),
    /// List or decide flagged requirements.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Show the source section of a requirement.
    Trace { req_id: String },
    /// Score a stored run against ground truth.
    Eval(EvalArgs),
    /// Monte-Carlo hallucination simulation.
    Simulate(SimulateArgs),
    /// Derive provider weights from standalone accuracy on ground truth.
    CalibrateWeights(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Parallel,
    Sequential,
}

impl From<ModeArg> for ExecutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Parallel => ExecutionMode::Parallel,
            ModeArg::Sequential => ExecutionMode::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptModeArg {
    Pegs,
    Generic,
}

impl From<PromptModeArg> for PlanMode {
    fn from(m: PromptModeArg) -> Self {
        match m {
            PromptModeArg::Pegs => PlanMode::PegsAll,
            PromptModeArg::Generic => PlanMode::Generic,
        }
    }
}

/// Overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunOverrides {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub prompt_mode: Option<PromptModeArg>,
    /// Concurrent prompts per batch.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Send low-complexity documents to the cheapest provider only.
    #[arg(long)]
    pub cost_routing: bool,
    #[arg(long)]
    pub complexity_cutoff: Option<f64>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    pub prompt_dir: Option<PathBuf>,
    #[arg(long)]
    pub dedup_threshold: Option<f64>,
    #[arg(long)]
    pub flag_threshold: Option<f64>,
    #[arg(long)]
    pub failover_threshold: Option<f64>,
    #[arg(long)]
    pub chunk_max_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub overrides: RunOverrides,
    /// Documents (.md as Markdown, anything else as plain text). A sidecar
    /// `<name>.manifest.json` supplies section pages.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Bearer token for mutating requests; overrides `auth_token` in the configuration.
    #[arg(long, env = "REQFUSION_TOKEN")]
    pub token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => ExportFormat::Jsonl,
            FormatArg::Csv => ExportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub run_id: String,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: FormatArg,
    /// Output file; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// List requirements, pending ones by default, lowest confidence first.
    List {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, default_value = "pending", value_parser = parse_state)]
        state: ReviewStatus,
        #[arg(long, value_parser = parse_pegs)]
        pegs: Option<PegsCategory>,
    },
    /// Accept or reject a pending requirement.
    Decide {
        req_id: String,
        #[arg(value_parser = parse_decision)]
        decision: Decision,
        #[arg(long)]
        reviewer: Option<String>,
        #[arg(long)]
        note: Option<String>,
    },
}

fn parse_state(s: &str) -> Result<ReviewStatus, String> {
    s.parse()
}

fn parse_pegs(s: &str) -> Result<PegsCategory, String> {
    s.parse()
        .map_err(|e: reqfusion_core::taxonomy::LabelError| e.to_string())
}

fn parse_decision(s: &str) -> Result<Decision, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub run_id: String,
    /// JSON-lines ground truth in the export record format.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Score only auto-accepted and accepted items.
    #[arg(long)]
    pub final_only: bool,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 3)]
    pub providers: usize,
    /// False-positive share of one provider's own output.
    #[arg(long, default_value_t = 0.34)]
    pub fp_rate: f64,
    /// Probability that another provider repeats a hallucination.
    #[arg(long, conflicts_with = "calibrate")]
    pub overlap: Option<f64>,
    /// Pick the overlap rate whose expected confirmed false-positive share is this value.
    #[arg(long)]
    pub calibrate: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub recall: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}
