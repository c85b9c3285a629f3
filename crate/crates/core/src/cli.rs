//! The `raresim` command line.
//!
//! Exit codes: 0 success, 1 input or data error, 2 usage error, 3 the
//! cross-entropy search stalled (every iteration had an empty level set).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::ce::{
    self, compare_report, estimate_is, estimate_naive, report, required_sample_size, run_ce, select_best, CeConfig,
    CeError, LevelRule, Method, Schedule,
};
use crate::expfam;
use crate::objective::{ego_policy, Highway, Objective, ToyGaussian};
use crate::orchestrator::{self, derive_seed, hex, RolloutProvider, Serial, WorkerPool, ACCEPT_TIMEOUT};
use crate::scenario::{self, params_io};
use crate::sim;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STALL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Stall(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Stall(_) => EXIT_STALL,
        }
    }
}

impl From<CeError> for CliError {
    fn from(e: CeError) -> Self {
        match e {
            CeError::Config(msg) => CliError::Usage(msg),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "raresim", version, about = "Rare-event estimation with cross-entropy importance sampling")]
pub struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plain Monte Carlo estimate under the base distribution; writes naive.csv.
    Naive(NaiveArgs),
    /// Cross-entropy search; writes ce_history.csv and theta_ce.params.
    Ce(CeArgs),
    /// Importance-sampling estimate under a parameter file; writes is.csv.
    Eval(EvalArgs),
    /// Compares an is.csv against a naive.csv; writes compare.csv and compare.txt.
    Compare(CompareArgs),
    /// Serves rollouts for a controller.
    Worker(WorkerArgs),
    /// Prints the sample size ⌈1/(p·eps²)⌉ for relative accuracy eps.
    RequiredN(RequiredNArgs),
    /// Writes the vehicle trajectories of one rollout as CSV.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ObjectiveArgs {
    /// Scenario file.
    #[arg(long, required_unless_present = "toy_gaussian", conflicts_with = "toy_gaussian")]
    pub scenario: Option<PathBuf>,
    /// Use f(x) = x under a one-dimensional standard normal instead of the simulator.
    #[arg(long)]
    pub toy_gaussian: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelRuleArg {
    Descend,
    Min,
}

impl From<LevelRuleArg> for LevelRule {
    fn from(a: LevelRuleArg) -> Self {
        match a {
            LevelRuleArg::Descend => LevelRule::Descend,
            LevelRuleArg::Min => LevelRule::Min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkerMode {
    /// Spawn worker processes of this executable.
    Process,
    /// Run workers as threads of this process (still over sockets).
    Thread,
    /// Wait for externally launched workers to connect to --endpoint.
    External,
}

#[derive(Debug, Clone, Args)]
pub struct PoolArgs {
    /// Worker count; 0 runs every rollout in-process without sockets.
    #[arg(long, env = "RARESIM_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Address the controller listens on.
    #[arg(long, env = "RARESIM_ENDPOINT", default_value = "127.0.0.1:0")]
    pub endpoint: String,
    #[arg(long, value_enum, default_value_t = WorkerMode::Process)]
    pub worker_mode: WorkerMode,
}

#[derive(Debug, Clone, Args)]
pub struct NaiveArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Number of rollouts.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Thresholds to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.14,0.15,0.19,0.20")]
    pub gamma_test: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CeArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Quantile level ρ in (0,1).
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    /// Number of iterations K.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Samples per iteration; a comma-separated list gives a schedule.
    #[arg(long, value_delimiter = ',', default_value = "5000")]
    pub n_per_iter: Vec<usize>,
    /// Step size in (0,1]; a comma-separated list gives a schedule.
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    pub alpha: Vec<f64>,
    /// Rare-event threshold γ [default: the scenario's measure.gamma_s, or -3 for the toy].
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Iteration level: `descend` uses max(γ, quantile), `min` uses min(γ, quantile).
    #[arg(long, value_enum, default_value_t = LevelRuleArg::Descend)]
    pub level_rule: LevelRuleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Parameter file to sample from (e.g. theta_ce.params).
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.14,0.15,0.19,0.20")]
    pub gamma_test: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Importance-sampling estimates.
    #[arg(long = "is")]
    pub is_csv: PathBuf,
    /// Plain Monte Carlo estimates.
    #[arg(long = "naive")]
    pub naive_csv: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct WorkerArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Controller address.
    #[arg(long, env = "RARESIM_ENDPOINT")]
    pub endpoint: String,
    /// Drop the connection on receipt of the given task number (fault injection).
    #[arg(long, hide = true)]
    pub die_after: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RequiredNArgs {
    /// Target probability p.
    #[arg(long)]
    pub p: f64,
    /// Relative accuracy ε.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    /// Scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Parameters to sample the realization from [default: the base distribution].
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub scenario_hash: Option<String>,
    pub config: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub start_unix: u64,
    pub end_unix: Option<u64>,
    pub outputs: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    /// Creates the output directory and writes the manifest before any output.
    fn start(
        out: &Path,
        name: &str,
        command_line: &[String],
        hash: Option<[u8; 32]>,
        config: Value,
        seed: Option<u64>,
        outputs: &[&str],
    ) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
        let config = match config {
            Value::Object(map) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        };
        let w = ManifestWriter {
            path: out.join(format!("{name}.manifest.json")),
            manifest: RunManifest {
                command_line: command_line.to_vec(),
                scenario_hash: hash.map(|h| hex(&h)),
                config,
                seed,
                git_describe: git_describe(),
                start_unix: unix_now(),
                end_unix: None,
                outputs: outputs.iter().map(|o| out.join(o).display().to_string()).collect(),
            },
        };
        w.write()?;
        Ok(w)
    }

    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(input)?;
        fs::write(&self.path, text + "\n").map_err(|e| CliError::Input(format!("{}: {e}", self.path.display())))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.manifest.end_unix = Some(unix_now());
        self.write()
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_objective(args: &ObjectiveArgs) -> Result<Arc<dyn Objective>, CliError> {
    match &args.scenario {
        Some(path) => {
            let spec = scenario::parse(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(Highway::new(spec)))
        }
        None => Ok(Arc::new(ToyGaussian::new())),
    }
}

fn worker_command_args(args: &ObjectiveArgs) -> Result<Vec<OsString>, CliError> {
    let mut out: Vec<OsString> = vec!["worker".into()];
    match &args.scenario {
        Some(path) => {
            let abs = fs::canonicalize(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            out.push("--scenario".into());
            out.push(abs.into());
        }
        None => out.push("--toy-gaussian".into()),
    }
    Ok(out)
}

/// Serial execution for `--workers 0`, otherwise a connected worker pool.
fn make_provider<'a>(
    objective: &'a Arc<dyn Objective>,
    obj_args: &ObjectiveArgs,
    pool: &PoolArgs,
) -> Result<Box<dyn RolloutProvider + 'a>, CliError> {
    if pool.workers == 0 {
        return Ok(Box::new(Serial::new(objective.as_ref())));
    }
    let hash = objective.fingerprint();
    let pool = match pool.worker_mode {
        WorkerMode::Thread => WorkerPool::spawn_threads(Arc::clone(objective), pool.workers),
        WorkerMode::Process => {
            let exe = std::env::current_exe().map_err(input)?;
            WorkerPool::spawn_processes(&exe, &worker_command_args(obj_args)?, pool.workers, hash, &pool.endpoint)
        }
        WorkerMode::External => {
            let listener = std::net::TcpListener::bind(&pool.endpoint).map_err(input)?;
            log::info!("waiting for {} workers on {}", pool.workers, listener.local_addr().map_err(input)?);
            WorkerPool::accept(&listener, pool.workers, hash, ACCEPT_TIMEOUT)
        }
    }
    .map_err(input)?;
    Ok(Box::new(pool))
}

fn objective_config(args: &ObjectiveArgs) -> Value {
    match &args.scenario {
        Some(p) => json!({ "scenario": p.display().to_string() }),
        None => json!({ "toy_gaussian": true }),
    }
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

fn check_n(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("n must be ≥ 1".into()));
    }
    Ok(())
}

fn check_grid(gamma_test: &[f64]) -> Result<(), CliError> {
    if gamma_test.is_empty() || gamma_test.iter().any(|g| g.is_nan()) {
        return Err(CliError::Usage("gamma-test must list at least one number".into()));
    }
    Ok(())
}

fn cmd_naive(args: &NaiveArgs, argv: &[String]) -> Result<(), CliError> {
    check_n(args.n)?;
    check_grid(&args.gamma_test)?;
    let objective = load_objective(&args.objective)?;
    let config = merge(
        objective_config(&args.objective),
        json!({ "n": args.n, "gamma_test": args.gamma_test, "workers": args.pool.workers }),
    );
    let manifest = ManifestWriter::start(
        &args.out,
        "naive",
        argv,
        Some(objective.fingerprint()),
        config,
        Some(args.seed),
        &["naive.csv"],
    )?;
    let mut provider = make_provider(&objective, &args.objective, &args.pool)?;
    let reports = estimate_naive(objective.as_ref(), args.n, &args.gamma_test, provider.as_mut(), args.seed)?;
    write_output(&args.out.join("naive.csv"), &report::estimates_csv(&reports))?;
    for r in &reports {
        println!(
            "gamma_test {:>10.6}  p_hat {:.6e} ± {:.3e}  rare {}/{}",
            r.gamma_test, r.p_hat, r.std_err, r.rare_count, r.n
        );
    }
    manifest.finish()
}

fn ce_config(args: &CeArgs, default_gamma: f64) -> Result<CeConfig, CliError> {
    fn schedule<T: Copy>(v: &[T]) -> Schedule<T> {
        match v {
            [one] => Schedule::Constant(*one),
            many => Schedule::PerIteration(many.to_vec()),
        }
    }
    let config = CeConfig {
        rho: args.rho,
        alpha: schedule(&args.alpha),
        n_k: schedule(&args.n_per_iter),
        iterations: args.iterations,
        gamma: args.gamma.unwrap_or(default_gamma),
        level_rule: args.level_rule.into(),
        seed: args.seed,
    };
    config.validate()?;
    Ok(config)
}

fn cmd_ce(args: &CeArgs, argv: &[String]) -> Result<(), CliError> {
    // flag validation precedes any file access
    ce_config(args, 0.0)?;
    let objective = load_objective(&args.objective)?;
    let default_gamma = match &args.objective.scenario {
        Some(path) => scenario::parse(path).map_err(input)?.measure.gamma_s,
        None => -3.0,
    };
    let config = ce_config(args, default_gamma)?;
    let manifest = ManifestWriter::start(
        &args.out,
        "ce",
        argv,
        Some(objective.fingerprint()),
        merge(
            objective_config(&args.objective),
            json!({
                "rho": config.rho,
                "iterations": config.iterations,
                "n_per_iter": args.n_per_iter,
                "alpha": args.alpha,
                "gamma": config.gamma,
                "level_rule": config.level_rule.label(),
                "workers": args.pool.workers,
            }),
        ),
        Some(args.seed),
        &["ce_history.csv", "theta_ce.params"],
    )?;
    let mut provider = make_provider(&objective, &args.objective, &args.pool)?;
    let history = match run_ce(objective.as_ref(), &config, provider.as_mut()) {
        Ok(h) => h,
        Err(CeError::Provider {
            iteration,
            source,
            history,
        }) => {
            write_output(&args.out.join("ce_history.csv"), &report::history_csv(&history))?;
            return Err(CliError::Input(format!(
                "rollouts failed at iteration {iteration}: {source}; partial history written"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_output(&args.out.join("ce_history.csv"), &report::history_csv(&history))?;
    let best = select_best(&history);
    let theta_path = args.out.join("theta_ce.params");
    params_io::write_params(&theta_path, &best).map_err(input)?;
    if let Some(b) = history
        .iterations
        .iter()
        .min_by(|a, b| a.rho_quantile.total_cmp(&b.rho_quantile))
    {
        println!(
            "selected iterate {} (rho-quantile {:.6e}); wrote {}",
            b.k,
            b.rho_quantile,
            theta_path.display()
        );
    } else {
        println!("no iterations; wrote the base parameters to {}", theta_path.display());
    }
    manifest.finish()?;
    if history.stalled() {
        return Err(CliError::Stall(format!(
            "search stalled: all {} iterations had an empty level set below gamma = {}",
            history.iterations.len(),
            config.gamma
        )));
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    check_n(args.n)?;
    check_grid(&args.gamma_test)?;
    let objective = load_objective(&args.objective)?;
    let theta = params_io::read_params(&args.theta).map_err(|e| match e {
        params_io::BinaryError::Io { .. } => input(e),
        other => CliError::Input(format!("{}: {other}", args.theta.display())),
    })?;
    objective
        .family()
        .check_params(&theta)
        .map_err(|e| CliError::Input(format!("{} does not fit the family: {e}", args.theta.display())))?;
    let manifest = ManifestWriter::start(
        &args.out,
        "eval",
        argv,
        Some(objective.fingerprint()),
        merge(
            objective_config(&args.objective),
            json!({
                "theta": args.theta.display().to_string(),
                "n": args.n,
                "gamma_test": args.gamma_test,
                "workers": args.pool.workers,
            }),
        ),
        Some(args.seed),
        &["is.csv"],
    )?;
    let mut provider = make_provider(&objective, &args.objective, &args.pool)?;
    let reports = estimate_is(objective.as_ref(), &theta, args.n, &args.gamma_test, provider.as_mut(), args.seed)?;
    write_output(&args.out.join("is.csv"), &report::estimates_csv(&reports))?;
    for r in &reports {
        println!(
            "gamma_test {:>10.6}  p_hat {:.6e} ± {:.3e}  rare {}/{}  ess {:.1}",
            r.gamma_test, r.p_hat, r.std_err, r.rare_count, r.n, r.ess
        );
    }
    manifest.finish()
}

fn read_estimates(path: &Path, method: Method) -> Result<Vec<ce::EstimateReport>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    report::parse_estimates(&text, method).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: &CompareArgs, argv: &[String]) -> Result<(), CliError> {
    let ce_reports = read_estimates(&args.is_csv, Method::CrossEntropy)?;
    let naive_reports = read_estimates(&args.naive_csv, Method::Naive)?;
    let rows = compare_report(&ce_reports, &naive_reports)?;
    let manifest = ManifestWriter::start(
        &args.out,
        "compare",
        argv,
        None,
        json!({
            "is": args.is_csv.display().to_string(),
            "naive": args.naive_csv.display().to_string(),
        }),
        None,
        &["compare.csv", "compare.txt"],
    )?;
    write_output(&args.out.join("compare.csv"), &report::comparison_csv(&rows))?;
    let summary = report::comparison_summary(&ce_reports, &naive_reports, &rows);
    write_output(&args.out.join("compare.txt"), &summary)?;
    print!("{summary}");
    manifest.finish()
}

fn cmd_worker(args: &WorkerArgs) -> Result<(), CliError> {
    let objective = load_objective(&args.objective)?;
    orchestrator::worker_loop(&args.endpoint, objective.as_ref(), args.die_after).map_err(input)
}

fn cmd_required_n(args: &RequiredNArgs) -> Result<(), CliError> {
    let n = required_sample_size(args.p, args.eps)?;
    println!("{n}");
    Ok(())
}

fn cmd_trace(args: &TraceArgs) -> Result<(), CliError> {
    let spec = scenario::parse(&args.scenario).map_err(|e| CliError::Input(format!("{}: {e}", args.scenario.display())))?;
    let (family, theta0) = scenario::base_family(&spec);
    let theta = match &args.theta {
        Some(p) => params_io::read_params(p).map_err(input)?,
        None => theta0,
    };
    family.check_params(&theta).map_err(input)?;
    // the first realization of the batch a `naive`/`eval` run with this seed draws
    let x = expfam::sample(&family, &theta, derive_seed(args.seed, 0)).map_err(input)?;
    let mut file = fs::File::create(&args.out).map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    writeln!(file, "step,vehicle,x,y,heading,speed").map_err(input)?;
    let ego = ego_policy(spec.ego.policy);
    let result =
        sim::rollout_with_trace(&x, &spec, ego.as_ref(), derive_seed(args.seed, 1), Some(&mut file)).map_err(input)?;
    println!(
        "min_ttc {:.6} s, crashed {}, steps {}; wrote {}",
        result.min_ttc,
        result.crashed,
        result.steps,
        args.out.display()
    );
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match &cli.command {
        Command::Naive(a) => cmd_naive(a, &argv),
        Command::Ce(a) => cmd_ce(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::Compare(a) => cmd_compare(a, &argv),
        Command::Worker(a) => cmd_worker(a),
        Command::RequiredN(a) => cmd_required_n(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("\nFor more information, try '--help'.");
            }
            e.exit_code()
        }
    }
}
