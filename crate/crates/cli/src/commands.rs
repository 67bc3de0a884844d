//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use reqfusion_core::config::RunConfig;
use reqfusion_core::consensus::MergedRequirement;
use reqfusion_core::metrics::{
    calibrate_weights, compute_report, cost_time_report, provider_scores, read_ground_truth,
    CostSummary, EngineUsage, GroundTruthItem, ManualBaseline, TimeSummary,
};
use reqfusion_core::pipeline::{summarize_runs, Pipeline, PipelineError, RunSummary};
use reqfusion_core::simulate::{calibrate_overlap, simulate_hallucination, SimulationParams};
use reqfusion_core::store::{RequirementFilter, Store};
use serde_json::json;

use crate::args::{
    CalibrateArgs, Cli, Command, EvalArgs, ExportArgs, ExtractArgs, ReviewCommand, RunOverrides,
    ServeArgs, SimulateArgs,
};
use crate::error::{CliError, EXIT_ALL_PROVIDERS_FAILED};
use crate::service;

/// Run a parsed command line and return the process exit status.
pub async fn run(cli: Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Extract(args) => extract(&cli, args).await,
        Command::Serve(args) => serve(&cli, args).await.map(|_| 0),
        Command::Runs => runs(&cli).map(|_| 0),
        Command::Export(args) => export(&cli, args).map(|_| 0),
        Command::Review(cmd) => review(&cli, cmd).map(|_| 0),
        Command::Trace { req_id } => trace(&cli, req_id).map(|_| 0),
        Command::Eval(args) => eval(&cli, args).map(|_| 0),
        Command::Simulate(args) => simulate(args).map(|_| 0),
        Command::CalibrateWeights(args) => calibrate(&cli, args).await.map(|_| 0),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Usage("no configuration given; use --config or REQFUSION_CONFIG".into())
    })?;
    Ok(RunConfig::load(path)?)
}

/// Store directory from `--store`, then the configuration if one is given.
fn store_dir(cli: &Cli, config: Option<&RunConfig>) -> Result<PathBuf, CliError> {
    if let Some(dir) = &cli.store {
        return Ok(dir.clone());
    }
    let from_config = match config {
        Some(c) => c.store_path(),
        None => match &cli.config {
            Some(_) => load_config(cli)?.store_path(),
            None => None,
        },
    };
    from_config.ok_or_else(|| {
        CliError::Usage(
            "no store given; use --store, REQFUSION_STORE or `store` in the configuration".into(),
        )
    })
}

fn open_store(cli: &Cli) -> Result<Store, CliError> {
    Ok(Store::open(store_dir(cli, None)?)?)
}

pub fn apply_overrides(config: &mut RunConfig, o: &RunOverrides) -> Result<(), CliError> {
    if let Some(m) = o.mode {
        config.mode = m.into();
    }
    if let Some(m) = o.prompt_mode {
        config.prompt_mode = m.into();
    }
    if let Some(n) = o.max_in_flight {
        config.max_in_flight = n;
    }
    if o.cost_routing {
        config.routing.cost_routing = true;
    }
    if let Some(c) = o.complexity_cutoff {
        config.routing.complexity_cutoff = c;
    }
    if let Some(dir) = &o.prompt_dir {
        config.prompt_dir = Some(std::path::absolute(dir).map_err(CliError::io(dir))?);
    }
    if let Some(t) = o.dedup_threshold {
        config.thresholds.dedup = t;
    }
    if let Some(t) = o.flag_threshold {
        config.thresholds.flag = t;
    }
    if let Some(t) = o.failover_threshold {
        config.thresholds.failover = t;
    }
    if let Some(n) = o.chunk_max_tokens {
        config.chunk_max_tokens = n;
    }
    config.validate()?;
    Ok(())
}

async fn extract(cli: &Cli, args: &ExtractArgs) -> Result<u8, CliError> {
    let mut config = load_config(cli)?;
    apply_overrides(&mut config, &args.overrides)?;
    let dir = store_dir(cli, Some(&config))?;
    let pipeline = Pipeline::from_config(config)?;
    let mut store = Store::open_or_create(&dir)?;

    let mut summaries = Vec::new();
    let mut failed = 0;
    for input in &args.inputs {
        let document = Pipeline::load_input(input)?;
        match pipeline.run_document(&mut store, document).await {
            Ok(summary) => {
                println!("{summary}");
                summaries.push(summary);
            }
            Err(e @ PipelineError::AllProvidersFailed { .. }) => {
                eprintln!("error: {}: {e}", input.display());
                failed += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if summaries.len() > 1 {
        println!("{}", summarize_runs(&summaries));
    }
    Ok(if failed > 0 {
        EXIT_ALL_PROVIDERS_FAILED
    } else {
        0
    })
}

async fn serve(cli: &Cli, args: &ServeArgs) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let token = args
        .token
        .clone()
        .or_else(|| config.auth_token.clone())
        .ok_or_else(|| {
            CliError::Usage(
                "serve needs a bearer token; use --token, REQFUSION_TOKEN or `auth_token`".into(),
            )
        })?;
    let dir = store_dir(cli, Some(&config))?;
    let store = Store::open_or_create(&dir)?;
    let pipeline = Pipeline::from_config(config)?;
    let state = service::AppState::new(pipeline, store, token);
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .map_err(CliError::Server)?;
    let addr = listener.local_addr().map_err(CliError::Server)?;
    println!("listening on http://{addr}");
    axum::serve(listener, service::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(CliError::Server)
}

fn runs(cli: &Cli) -> Result<(), CliError> {
    let store = open_store(cli)?;
    for run in store.runs() {
        let title = store
            .document(run.doc_id.as_str())
            .map_or("", |d| d.title.as_str());
        let s = RunSummary::from_entry(run, title);
        println!(
            "{}  {}  {}  {} requirements, {} pending, {}",
            s.run_id,
            s.doc_id,
            s.title,
            s.total,
            s.pending,
            s.type_split()
        );
    }
    Ok(())
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<(), CliError> {
    let store = open_store(cli)?;
    let bytes = store.export_final(&args.run_id, args.format.into())?;
    match &args.out {
        Some(path) => std::fs::write(path, &bytes).map_err(CliError::io(path))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes)
                .and_then(|_| out.flush())
                .map_err(CliError::io("stdout"))?;
        }
    }
    Ok(())
}

fn review(cli: &Cli, cmd: &ReviewCommand) -> Result<(), CliError> {
    let mut store = open_store(cli)?;
    match cmd {
        ReviewCommand::List { run, state, pegs } => {
            let filter = RequirementFilter {
                run_id: run.clone(),
                status: Some(*state),
                pegs: *pegs,
            };
            for r in service::lowest_confidence_first(store.requirements(&filter)) {
                let m = &r.requirement;
                println!(
                    "{}  {:.3}  {:<11}  {:<14}  {}  {}",
                    m.req_id,
                    m.confidence,
                    m.pegs.name(),
                    m.req_type.as_str(),
                    r.review.status,
                    m.text
                );
            }
        }
        ReviewCommand::Decide {
            req_id,
            decision,
            reviewer,
            note,
        } => {
            let state = store.decide(req_id, *decision, reviewer.as_deref(), note.as_deref())?;
            println!("{req_id}: pending_review -> {}", state.status);
        }
    }
    Ok(())
}

fn trace(cli: &Cli, req_id: &str) -> Result<(), CliError> {
    let store = open_store(cli)?;
    let t = store.trace_back(req_id)?;
    println!(
        "{} {} \"{}\" page {}",
        t.req_id, t.doc_id, t.section_label, t.page
    );
    println!();
    println!("{}", t.excerpt);
    Ok(())
}

fn read_gt(path: &Path) -> Result<Vec<GroundTruthItem>, CliError> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    Ok(read_ground_truth(std::io::BufReader::new(file))?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let store = open_store(cli)?;
    let run = store.run(&args.run_id)?;
    let merged: Vec<MergedRequirement> = run
        .requirements
        .iter()
        .filter(|r| !args.final_only || r.review.status.is_final())
        .map(|r| r.requirement.clone())
        .collect();
    let gt = read_gt(&args.ground_truth)?;
    let mut report = compute_report(&merged, &gt, &[]);
    let usage = EngineUsage {
        total_cost_usd: run.meta.cost_usd,
        wall: Duration::from_millis(run.meta.wall_ms),
        requirements: merged.len(),
    };
    report.cost = CostSummary {
        total_usd: usage.total_cost_usd,
        per_requirement_usd: usage.cost_per_requirement(),
    };
    report.time = TimeSummary {
        wall_secs: usage.wall.as_secs_f64(),
        per_requirement_secs: usage.secs_per_requirement(),
    };
    let cost_time = cost_time_report(&usage, &ManualBaseline::default());
    print!("{}", report.render());
    println!();
    print!("{cost_time}");
    if let Some(path) = &args.report {
        write_json(path, &json!({"evaluation": report, "cost_time": cost_time}))?;
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut params = SimulationParams {
        n_items: args.items,
        n_providers: args.providers,
        fp_rate_single: args.fp_rate,
        overlap_rate: args.overlap.unwrap_or(0.0),
        provider_recall: args.recall,
        trials: args.trials,
        seed: args.seed,
    };
    params.validate()?;
    if let Some(target) = args.calibrate {
        params.overlap_rate = calibrate_overlap(&params, target);
        println!("calibrated overlap rate: {:.4}", params.overlap_rate);
    }
    let report = simulate_hallucination(&params)?;
    print!("{report}");
    if let Some(path) = &args.report {
        write_json(
            path,
            &serde_json::to_value(&report).expect("report serializes"),
        )?;
    }
    Ok(())
}

async fn calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<(), CliError> {
    let pipeline = Pipeline::from_config(load_config(cli)?)?;
    let mut records = Vec::new();
    for input in &args.inputs {
        let extraction = pipeline.extract(Pipeline::load_input(input)?).await;
        records.extend(extraction.batch.records);
    }
    let gt = read_gt(&args.ground_truth)?;
    let scores = provider_scores(&records, &gt);
    let f1: BTreeMap<String, f64> = scores.iter().map(|(id, s)| (id.clone(), s.f1)).collect();
    let weights = calibrate_weights(&f1);
    println!(
        "{:<16} {:>9} {:>6} {:>5} {:>7}",
        "Provider", "Precision", "Recall", "F1", "Weight"
    );
    for (id, s) in &scores {
        println!(
            "{:<16} {:>9.3} {:>6.3} {:>5.3} {:>7.4}",
            id, s.precision, s.recall, s.f1, weights[id]
        );
    }
    println!();
    for (id, w) in &weights {
        println!("[[providers]]\nprovider_id = \"{id}\"\nweight = {w}\n");
    }
    Ok(())
}
