//! Command-line front end for the extremescore toolkit.
//!
//! Every output starts with (CSV, dumps) or contains (JSON) a reproduction
//! record: the tool version and the full argument list.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use extremescore::asymptotics::{k_schedule, thresholds, AsymptoticsError, DEFAULT_DELTA};
use extremescore::distributions::{DistributionError, DistributionFile, ScoreDistribution};
use extremescore::engine::{simulate_scores, EngineError, RandomStream};
use extremescore::experiments::{
    write_csv, DistributionSpec, Experiment, ExperimentConfig, ExperimentError, KRule,
    ThresholdMode,
};
use extremescore::oracle::{enumerate_exact, render, OracleError};
use extremescore::tilting::{
    collision_bound_at, collision_expectation_bound, exact_pmf, exact_pmf_rational, CollisionBound,
    TiltingError,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "extremescore",
    version,
    about = "Score-sequence extremes of random round-robin tournaments"
)]
pub struct Cli {
    /// Write output to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a match-score distribution and print its moments as JSON.
    Dist(DistArgs),
    /// Solve for the threshold t_{n,k} and print it as JSON.
    Threshold(ThresholdArgs),
    /// Exact pmf of the sum of m match scores, as CSV.
    Pmf(PmfArgs),
    /// Pairing bound on E W_n(t) over a grid of n, as CSV.
    Bound(BoundArgs),
    /// Exhaustive enumeration of all tournaments on n players, as JSON.
    Exact(ExactArgs),
    /// Monte Carlo estimate at a single (n, k), as CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo estimates over a grid of n, as CSV.
    Sweep(SweepArgs),
    /// Simulate one tournament and dump its score vector.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DistArg {
    /// Match-score distribution: `m1`, `draw:<p>`, or a JSON file.
    #[arg(long, default_value = "m1")]
    pub dist: String,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    #[command(flatten)]
    pub dist: DistArg,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub dist: DistArg,
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub k: u64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct PmfArgs {
    #[command(flatten)]
    pub dist: DistArg,
    /// Number of summands.
    #[arg(long)]
    pub m: u64,
    /// Also emit each mass as an exact rational (small lattices only).
    #[arg(long)]
    pub rational: bool,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub dist: DistArg,
    /// Comma-separated player counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u64>,
    /// Fixed k; defaults to the k schedule.
    #[arg(long)]
    pub k: Option<u64>,
    /// Damping of the k schedule.
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Evaluate at an explicit threshold (points) instead of t_{n,k}.
    #[arg(long)]
    pub t: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub dist: DistArg,
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON); flags given alongside override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Match-score distribution: `m1`, `draw:<p>`, or a JSON file.
    #[arg(long)]
    pub dist: Option<String>,
    /// Fixed k.
    #[arg(long, conflicts_with = "damping")]
    pub k: Option<u64>,
    /// Use the k schedule with this damping.
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// `solved`, `none`, or a threshold in points.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Number of replications.
    #[arg(long = "replications", short = 'R')]
    pub replications: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "EXTREMESCORE_WORKERS")]
    pub workers: Option<usize>,
    /// Fill the elapsed_ms column (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub n: Option<u64>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated, strictly increasing player counts.
    #[arg(long = "n-grid", value_delimiter = ',')]
    pub n_grid: Option<Vec<u64>>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dist: DistArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Thresholds(#[from] AsymptoticsError),
    #[error(transparent)]
    Tilting(#[from] TiltingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn experiment_code(e: &ExperimentError) -> i32 {
    match e {
        ExperimentError::Csv(_) | ExperimentError::Io(_) => 1,
        _ => 2,
    }
}

impl CliError {
    /// 2 for usage and config errors, 3 for size guards, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Distribution(_)
            | CliError::Thresholds(_)
            | CliError::Engine(_) => 2,
            CliError::Tilting(TiltingError::SupportTooLarge { .. }) => 3,
            CliError::Tilting(
                TiltingError::NoSummands
                | TiltingError::InvalidTheta(_)
                | TiltingError::InexactProbabilities
                | TiltingError::Thresholds(_),
            ) => 2,
            CliError::Tilting(_) => 1,
            CliError::Oracle(OracleError::StateSpaceTooLarge { .. }) => 3,
            CliError::Oracle(OracleError::Experiment(e)) => experiment_code(e),
            CliError::Oracle(_) => 2,
            CliError::Experiment(e) => experiment_code(e),
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let command_line: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &command_line.join(" ")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves `--dist`: a shorthand name, or else a path to a JSON file.
pub fn load_distribution(spec: &str) -> Result<(ScoreDistribution, DistributionSpec), CliError> {
    match ScoreDistribution::from_name(spec) {
        Ok(d) => Ok((d, DistributionSpec::Name(spec.to_string()))),
        Err(DistributionError::UnknownName(_)) if Path::new(spec).is_file() => {
            let text = fs::read_to_string(spec)
                .map_err(|e| CliError::Usage(format!("cannot read {spec}: {e}")))?;
            let d = ScoreDistribution::from_json(&text)?;
            let inline = DistributionSpec::Inline(DistributionFile::from(&d));
            Ok((d, inline))
        }
        Err(e) => Err(e.into()),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json(out: Option<&Path>, mut value: Value, command_line: &str) -> Result<(), CliError> {
    if let Value::Object(map) = &mut value {
        map.insert("version".into(), json!(VERSION));
        map.insert("command".into(), json!(command_line));
    }
    let mut w = open_output(out)?;
    serde_json::to_writer_pretty(&mut w, &value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn header(command_line: &str) -> String {
    format!("extremescore {VERSION} | {command_line}")
}

fn execute(cli: &Cli, command_line: &str) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Dist(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let (mean, variance) = d.mean_variance();
            let mut value = json!({
                "label": d.label(),
                "denominator": d.denominator(),
                "support": d.support(),
                "probs": d.probs(),
                "mean": mean,
                "variance": variance,
                "sigma": d.sigma(),
                "file": DistributionFile::from(&d),
            });
            if let Some((mu, var)) = d.mean_variance_exact() {
                value["mean_exact"] = json!(render(&mu));
                value["variance_exact"] = json!(render(&var));
            }
            emit_json(out, value, command_line)
        }
        Command::Threshold(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let result = thresholds(a.n, a.k, a.delta, &d)?;
            emit_json(out, serde_json::to_value(result)?, command_line)
        }
        Command::Pmf(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let pmf = exact_pmf(&d, a.m)?;
            let exact = if a.rational {
                Some(exact_pmf_rational(&d, a.m)?)
            } else {
                None
            };
            let mut w = open_output(out)?;
            writeln!(w, "# {}", header(command_line))?;
            let mut csv = csv_writer(&mut w);
            let mut columns = vec!["s_scaled", "s", "mass"];
            if exact.is_some() {
                columns.push("mass_exact");
            }
            csv.write_record(&columns).map_err(csv_err)?;
            let q = f64::from(pmf.q);
            for (s, p) in pmf.mass.iter().enumerate() {
                let mut row = vec![s.to_string(), (s as f64 / q).to_string(), p.to_string()];
                if let Some(ex) = &exact {
                    row.push(render(&ex[s]));
                }
                csv.write_record(&row).map_err(csv_err)?;
            }
            csv.flush()?;
            drop(csv);
            w.flush()?;
            Ok(())
        }
        Command::Bound(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let mut w = open_output(out)?;
            writeln!(w, "# {}", header(command_line))?;
            let mut csv = csv_writer(&mut w);
            csv.write_record(["n", "k", "t", "bound", "bound_normalized"])
                .map_err(csv_err)?;
            for &n in &a.n {
                let k = match a.k {
                    Some(k) => k,
                    None => k_schedule(n as f64, a.damping)?,
                };
                let row = match a.t {
                    None => collision_expectation_bound(n, k, a.delta, &d)?,
                    Some(t) => {
                        if n < 3 {
                            return Err(TiltingError::NoSummands.into());
                        }
                        let pmf = exact_pmf(&d, n - 2)?;
                        let bound = collision_bound_at(&pmf, n, t);
                        let (nf, kf) = (n as f64, k as f64);
                        let scale = kf * kf * (nf / kf).ln() / nf.sqrt();
                        CollisionBound {
                            n,
                            k,
                            t,
                            bound,
                            bound_normalized: bound / scale,
                        }
                    }
                };
                csv.write_record([
                    row.n.to_string(),
                    row.k.to_string(),
                    row.t.to_string(),
                    row.bound.to_string(),
                    row.bound_normalized.to_string(),
                ])
                .map_err(csv_err)?;
            }
            csv.flush()?;
            drop(csv);
            w.flush()?;
            Ok(())
        }
        Command::Exact(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let report = enumerate_exact(&d, a.n)?;
            emit_json(out, report.to_json(), command_line)
        }
        Command::Estimate(a) => {
            let config = build_config(&a.run, a.n.map(|n| vec![n]))?;
            if config.n_grid.len() != 1 {
                return Err(CliError::Usage("estimate takes a single n".into()));
            }
            run_experiment(out, config, a.run.timing, command_line)
        }
        Command::Sweep(a) => {
            let config = build_config(&a.run, a.n_grid.clone())?;
            run_experiment(out, config, a.run.timing, command_line)
        }
        Command::Simulate(a) => {
            let (d, _) = load_distribution(&a.dist.dist)?;
            let v = simulate_scores(&d, a.n, &mut RandomStream::new(a.seed, a.stream))?;
            let mut w = open_output(out)?;
            writeln!(w, "# {}", header(command_line))?;
            v.write_dump(&mut w, a.seed, a.stream)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Experiment(ExperimentError::Csv(e))
}

fn parse_threshold(s: &str) -> Result<ThresholdMode, CliError> {
    match s {
        "solved" => Ok(ThresholdMode::Solved),
        "none" => Ok(ThresholdMode::None),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(ThresholdMode::Explicit)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "--threshold expects solved, none or a number, got {s:?}"
                ))
            }),
    }
}

/// Merges a JSON config file (if any) with command-line overrides.
pub fn build_config(run: &RunArgs, n_grid: Option<Vec<u64>>) -> Result<ExperimentConfig, CliError> {
    let mut config = match &run.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => ExperimentConfig {
            distribution: DistributionSpec::Name("m1".into()),
            n_grid: Vec::new(),
            k_rule: KRule::Schedule { damping: 1.0 },
            delta: DEFAULT_DELTA,
            replications: 0,
            seed: 0,
            threshold: ThresholdMode::Solved,
            workers: 1,
        },
    };
    if let Some(spec) = &run.dist {
        config.distribution = load_distribution(spec)?.1;
    }
    if let Some(grid) = n_grid {
        config.n_grid = grid;
    }
    if let Some(k) = run.k {
        config.k_rule = KRule::Fixed(k);
    }
    if let Some(damping) = run.damping {
        config.k_rule = KRule::Schedule { damping };
    }
    if let Some(delta) = run.delta {
        config.delta = delta;
    }
    if let Some(t) = &run.threshold {
        config.threshold = parse_threshold(t)?;
    }
    if let Some(r) = run.replications {
        config.replications = r;
    }
    if let Some(seed) = run.seed {
        config.seed = seed;
    }
    if let Some(workers) = run.workers {
        config.workers = workers;
    }
    if config.n_grid.is_empty() {
        return Err(CliError::Usage(
            "no player count given (--n, --n-grid or config)".into(),
        ));
    }
    if config.replications == 0 {
        return Err(CliError::Usage(
            "replications must be at least 1 (-R or config)".into(),
        ));
    }
    config.validate()?;
    Ok(config)
}

fn run_experiment(
    out: Option<&Path>,
    config: ExperimentConfig,
    timing: bool,
    command_line: &str,
) -> Result<(), CliError> {
    let experiment = Experiment::new(config)?;
    let rows = experiment.convergence_sweep()?;
    let meta = format!(
        "{} | config {}",
        header(command_line),
        serde_json::to_string(&experiment.config)?
    );
    let w = open_output(out)?;
    write_csv(w, &meta, &rows, timing)?;
    Ok(())
}
