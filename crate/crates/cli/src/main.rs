use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use cal_core::backends::{
    synthetic_tasks, BackendError, BackendSpec, RemoteOptions, SyntheticBackend,
    SyntheticLandscapeSpec,
};
use cal_core::bias_fit::{
    fit_bias, prepare_fit_dataset, weighted_sse, BiasFitError, FitOptions, DEFAULT_PROBE_GRID,
    DEFAULT_WINDOW,
};
use cal_core::formats::{self, FormatError};
use cal_core::harness::{
    read_results, record_probe_curves, run_experiment, summarize, ExperimentConfig, HarnessError,
    Mode, Report,
};
use cal_core::par::Execution;
use cal_core::SearchConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cal",
    version,
    about = "Calibrated length discovery for diffusion-LM infilling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the length-bias curve to a probe log.
    FitBias(FitBiasArgs),
    /// Run fixed, calibrated-search or exhaustive length selection over a task file.
    Discover(DiscoverArgs),
    /// Generate synthetic tasks and record their probe curves.
    Simulate(SimulateArgs),
    /// Probe every task at every grid length.
    Record(RecordArgs),
    /// Summarize a result file, optionally against a baseline.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct FitBiasArgs {
    #[arg(long)]
    probes: PathBuf,
    /// Task file supplying oracle lengths.
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Code,
    Text,
}

#[derive(Args)]
struct DiscoverArgs {
    /// Experiment config (JSON); replaces the other flags.
    #[arg(long, conflicts_with_all = ["tasks", "backend", "bias", "out"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    tasks: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    backend: Option<String>,
    #[arg(long)]
    bias: Option<PathBuf>,
    #[arg(long, default_value = "cal")]
    mode: String,
    #[arg(long, value_enum, default_value_t = Profile::Code)]
    profile: Profile,
    #[arg(long, default_value_t = 8)]
    l_init: usize,
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Defaults to 4 (code) or 2 (text).
    #[arg(long)]
    tolerance: Option<usize>,
    #[arg(long, default_value_t = 64)]
    l_max: usize,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long = "tasks")]
    n_tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PROBE_GRID)]
    grid: Vec<usize>,
    /// Also write the generated tasks here.
    #[arg(long)]
    tasks_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    oracle_min: usize,
    #[arg(long, default_value_t = 40)]
    oracle_max: usize,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    backend: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PROBE_GRID)]
    grid: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Error with its exit status: 1 for bad input, 2 for runtime failures.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitClass: Into<anyhow::Error> {
    fn is_input_error(&self) -> bool;

    fn fail(self) -> Failure {
        let code = if self.is_input_error() { 1 } else { 2 };
        Failure {
            code,
            error: self.into(),
        }
    }
}

impl ExitClass for FormatError {
    // Unreadable input files count as usage errors.
    fn is_input_error(&self) -> bool {
        true
    }
}

impl ExitClass for HarnessError {
    fn is_input_error(&self) -> bool {
        matches!(self, HarnessError::Format(_)) || self.is_validation()
    }
}

impl ExitClass for BackendError {
    fn is_input_error(&self) -> bool {
        matches!(self, BackendError::Config(_))
    }
}

impl ExitClass for BiasFitError {
    fn is_input_error(&self) -> bool {
        !matches!(self, BiasFitError::Divergence { .. })
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn write_report(path: &Path, value: &Report) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn fit_bias_cmd(args: FitBiasArgs) -> Result<(), Failure> {
    let records = formats::read_probe_log(&args.probes).map_err(ExitClass::fail)?;
    let tasks = formats::read_tasks(&args.tasks).map_err(ExitClass::fail)?;
    let oracles: HashMap<String, usize> = tasks
        .iter()
        .filter_map(|t| Some((t.task_id.clone(), t.oracle_length?)))
        .collect();
    let data = prepare_fit_dataset(&records, &oracles, args.window).map_err(ExitClass::fail)?;
    let model = fit_bias(&data, &FitOptions::default()).map_err(ExitClass::fail)?;
    formats::write_bias_model(&args.out, &model).map_err(|e| runtime(e.into()))?;
    println!(
        "B(L) = {:.4}*exp(-{:.4}L) + {:.4}*exp(-{:.4}L) + {:.4}  ({} lengths, weighted SSE {:.3e})",
        model.a,
        model.b,
        model.c,
        model.d,
        model.e,
        data.points().len(),
        weighted_sse(&model, &data)
    );
    Ok(())
}

fn discover_config(args: DiscoverArgs) -> Result<ExperimentConfig, Failure> {
    if let Some(path) = args.config {
        return ExperimentConfig::read(&path).map_err(ExitClass::fail);
    }
    let tolerance = args.tolerance.unwrap_or(match args.profile {
        Profile::Code => 4,
        Profile::Text => 2,
    });
    let search = SearchConfig::new(args.step, tolerance, args.l_init, args.l_max)
        .map_err(|e| usage(e.into()))?;
    let backend: BackendSpec = args
        .backend
        .expect("required by clap")
        .parse()
        .map_err(ExitClass::fail)?;
    let config = ExperimentConfig {
        mode: args.mode.parse().map_err(ExitClass::fail)?,
        search,
        bias_model_path: args.bias,
        backend,
        tasks_path: args.tasks.expect("required by clap"),
        output_path: args.out.expect("required by clap"),
        concurrency: args.concurrency,
        seed: args.seed,
    };
    config.validate().map_err(ExitClass::fail)?;
    Ok(config)
}

fn discover_cmd(args: DiscoverArgs) -> Result<(), Failure> {
    let config = discover_config(args)?;
    let results = run_experiment(&config).map_err(ExitClass::fail)?;
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    for r in results.iter().filter_map(|r| Some((r, r.error.as_ref()?))) {
        eprintln!("{}: {}", r.0.task_id, r.1.message);
    }
    println!(
        "{} task(s), {} failed, results in {}",
        results.len(),
        errors,
        config.output_path.display()
    );
    if config.mode == Mode::Fixed {
        return Ok(());
    }
    let mut lengths: Vec<usize> = results.iter().filter_map(|r| r.l_used).collect();
    lengths.sort_unstable();
    if let (Some(lo), Some(hi)) = (lengths.first(), lengths.last()) {
        println!("selected lengths range {lo}..={hi}");
    }
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))
        .map_err(usage)?;
    let mut spec: SyntheticLandscapeSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.spec.display()))
        .map_err(usage)?;
    spec.seed = args.seed;
    if args.oracle_min == 0 || args.oracle_min > args.oracle_max {
        return Err(usage(anyhow!("need 1 <= --oracle-min <= --oracle-max")));
    }
    let backend = SyntheticBackend::new(spec).map_err(ExitClass::fail)?;
    let tasks = synthetic_tasks(args.n_tasks, args.seed, (args.oracle_min, args.oracle_max));
    let rec = record_probe_curves(&tasks, &backend, &args.grid, Execution::default())
        .map_err(ExitClass::fail)?;
    formats::write_probe_log(&args.out, &rec.records).map_err(|e| runtime(e.into()))?;
    if let Some(path) = &args.tasks_out {
        formats::write_tasks(path, &tasks).map_err(|e| runtime(e.into()))?;
    }
    println!(
        "{} record(s) for {} task(s), {} clipped probe(s)",
        rec.records.len(),
        tasks.len(),
        backend.clipped_probes()
    );
    Ok(())
}

fn record_cmd(args: RecordArgs) -> Result<(), Failure> {
    let tasks = formats::read_tasks(&args.tasks).map_err(ExitClass::fail)?;
    let spec: BackendSpec = args.backend.parse().map_err(ExitClass::fail)?;
    let workers = args
        .concurrency
        .unwrap_or(if spec.is_remote() { 1 } else { 8 });
    if workers == 0 {
        return Err(usage(anyhow!("--concurrency must be >= 1")));
    }
    let remote = RemoteOptions {
        max_in_flight: workers,
        ..RemoteOptions::from_env().map_err(ExitClass::fail)?
    };
    let backend = spec.open(args.seed, &remote).map_err(ExitClass::fail)?;
    let rec = record_probe_curves(
        &tasks,
        &*backend,
        &args.grid,
        Execution::with_workers(workers),
    )
    .map_err(ExitClass::fail)?;
    for f in &rec.failures {
        eprintln!("{} @ {}: {}", f.task_id, f.length, f.message);
    }
    formats::write_probe_log(&args.out, &rec.records).map_err(|e| runtime(e.into()))?;
    println!(
        "{} record(s), {} failed probe(s)",
        rec.records.len(),
        rec.failures.len()
    );
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), Failure> {
    let results = read_results(&args.results).map_err(ExitClass::fail)?;
    let baseline = match &args.baseline {
        Some(p) => Some(read_results(p).map_err(ExitClass::fail)?),
        None => None,
    };
    let report = summarize(&results, baseline.as_deref()).map_err(ExitClass::fail)?;
    print!("{}", report.to_table());
    write_report(&args.out, &report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::FitBias(a) => fit_bias_cmd(a),
        Command::Discover(a) => discover_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Record(a) => record_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
