//! `lambdaq`: lambda-quantile time series, composition sweeps and the
//! invariant check suite from the command line.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error, 3 data
//! error, 4 any other failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use lambdaq::checks::{run_suite, summarize, SuiteOptions};
use lambdaq::pipeline::{run_sweep, run_timeseries, write_synthetic, OperatorChoice, RunConfig, RunSummary, Workspace};
use lambdaq::{Error, ShockMode};

#[derive(Debug, Parser)]
#[command(name = "lambdaq", version, about = "Lambda-quantile risk contributions and Euler allocations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Daily risk reports over the option's life.
    Timeseries(RunArgs),
    /// Contributions over the (10, 90) … (90, 10) composition grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Valuation date (repeatable); defaults to the first, middle and last dates.
        #[arg(long = "date", value_name = "YYYY-MM-DD")]
        dates: Vec<NaiveDate>,
        /// Sweep every valuation date.
        #[arg(long, conflicts_with = "dates")]
        all_dates: bool,
    },
    /// Runs the invariant suite on internal fixtures.
    Check {
        /// Multiply η by this factor wherever γ is formed; the degree-based
        /// checks must then fail.
        #[arg(long, value_name = "FACTOR", num_args = 0..=1, default_missing_value = "1.05")]
        perturb_eta: Option<f64>,
        /// Independent repetitions; more than one prints summary quantiles.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// First suite seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scenarios per simulated panel.
        #[arg(long, default_value_t = 100_000)]
        scenarios: usize,
    },
    /// Writes the synthetic stock and benchmark price files.
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = RunConfig::default().seed)]
        seed: u64,
    },
}

/// Run parameters; flags override the config file, which overrides defaults.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stock closes (date,close). Needs --benchmark-csv; without both the synthetic data is used.
    #[arg(long)]
    asset_csv: Option<PathBuf>,
    #[arg(long)]
    benchmark_csv: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    lambda_b: Option<f64>,
    /// Units of stock and call, e.g. 50,50.
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<f64>>,
    /// linear | mean_adj | pospart | var_adj[:level] | layer:D:L | power:τ | power_lq:τ
    #[arg(long)]
    operator: Option<OperatorChoice>,
    #[arg(long)]
    issue_date: Option<NaiveDate>,
    /// Fixed option volatility instead of the trailing estimate.
    #[arg(long)]
    option_vol: Option<f64>,
    /// Seed of the synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// abs | rel
    #[arg(long)]
    shock_mode: Option<ShockMode>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure while assembling the configuration; reported with exit code 2.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if self.asset_csv.is_some() || self.benchmark_csv.is_some() {
            c.asset_csv = self.asset_csv.clone();
            c.benchmark_csv = self.benchmark_csv.clone();
        }
        c.window = self.window.unwrap_or(c.window);
        c.lambda_a = self.lambda_a.unwrap_or(c.lambda_a);
        c.lambda_b = self.lambda_b.unwrap_or(c.lambda_b);
        if let Some(u) = &self.units {
            c.units = u.clone();
        }
        if let Some(op) = &self.operator {
            c.operator = *op;
        }
        c.issue_date = self.issue_date.or(c.issue_date);
        c.option_vol = self.option_vol.or(c.option_vol);
        c.seed = self.seed.unwrap_or(c.seed);
        c.shock_mode = self.shock_mode.unwrap_or(c.shock_mode);
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn workspace(&self) -> anyhow::Result<Workspace> {
        let config = self.resolve().map_err(|e| anyhow::Error::new(ConfigError(e)))?;
        Ok(Workspace::load(config)?)
    }
}

fn save_config(config: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run_config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

fn timeseries(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let ws = args.workspace()?;
    let dir = ws.config.out.clone();
    let reports = run_timeseries(&ws, &dir)?;
    save_config(&ws.config, &dir)?;
    let s = RunSummary::of(&reports);
    let gammas: Vec<f64> = reports.iter().map(|r| r.gamma).filter(|g| g.is_finite()).collect();
    let (lo, hi) = gammas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
    println!(
        "{} dates: {} flat (gamma = 1), {} interior, {} failed, {} non-estimable",
        s.rows, s.flat, s.interior, s.failures, s.non_estimable
    );
    if !gammas.is_empty() {
        println!("gamma range [{lo:.4}, {hi:.4}]");
    }
    println!("wrote {} in {:.2?}", dir.join("timeseries.csv").display(), start.elapsed());
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &RunArgs, dates: &[NaiveDate], all: bool) -> anyhow::Result<ExitCode> {
    let ws = args.workspace()?;
    let valuation = ws.valuation_dates();
    if valuation.is_empty() {
        return Err(Error::MissingData("no valuation dates between issue and expiry".into()).into());
    }
    let chosen: Vec<NaiveDate> = if all {
        valuation
    } else if dates.is_empty() {
        let mut d = vec![valuation[0], valuation[valuation.len() / 2], valuation[valuation.len() - 1]];
        d.dedup();
        d
    } else {
        for d in dates {
            if !valuation.contains(d) {
                return Err(Error::MissingData(format!("{d} is not a valuation date")).into());
            }
        }
        dates.to_vec()
    };
    let dir = ws.config.out.clone();
    let rows = run_sweep(&ws, &chosen, &dir)?;
    save_config(&ws.config, &dir)?;
    let flagged = rows.iter().filter(|r| !r.flags.is_empty()).count();
    println!("{} rows over {} dates, {flagged} flagged", rows.len(), chosen.len());
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn check(perturb: Option<f64>, seeds: u64, seed: u64, scenarios: usize) -> anyhow::Result<ExitCode> {
    if seeds == 0 {
        bail!(ConfigError(anyhow::anyhow!("--seeds must be at least 1")));
    }
    if let Some(f) = perturb {
        if !(f.is_finite() && f > 0.0) {
            bail!(ConfigError(anyhow::anyhow!("--perturb-eta must be a positive factor, got {f}")));
        }
    }
    let runs: Vec<_> = (0..seeds)
        .map(|k| {
            run_suite(&SuiteOptions {
                seed: seed + k,
                scenarios,
                eta_scale: perturb.unwrap_or(1.0),
            })
        })
        .collect();
    let failed = if seeds == 1 {
        println!("{:<32} {:>12} {:>10}  status", "check", "gap", "tolerance");
        for c in &runs[0] {
            let status = match (&c.error, c.passed) {
                (Some(e), _) => format!("ERROR {e}"),
                (None, true) => "ok".into(),
                (None, false) => "FAIL".into(),
            };
            println!("{:<32} {:>12.3e} {:>10.0e}  {status}", c.name, c.gap, c.tolerance);
        }
        runs[0].iter().filter(|c| !c.passed).count()
    } else {
        println!(
            "{:<32} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
            "check", "tolerance", "min", "median", "p90", "max", "failures"
        );
        let summary = summarize(&runs);
        for s in &summary {
            println!(
                "{:<32} {:>10.0e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>5}/{}",
                s.name, s.tolerance, s.min, s.median, s.p90, s.max, s.failures, s.runs
            );
        }
        summary.iter().filter(|s| s.failures > 0).count()
    };
    if failed > 0 {
        println!("{failed} check(s) failed");
        Ok(ExitCode::from(1))
    } else {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    }
}

fn synth(out: &Path, seed: u64) -> anyhow::Result<ExitCode> {
    let (stock, benchmark) = write_synthetic(out, seed)?;
    println!("wrote {} and {}", stock.display(), benchmark.display());
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<ConfigError>() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Validation(_) | Error::Json(_)) => 2,
        Some(err) if err.is_data_error() => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Timeseries(args) => timeseries(args),
        Command::Sweep { run, dates, all_dates } => sweep(run, dates, *all_dates),
        Command::Check {
            perturb_eta,
            seeds,
            seed,
            scenarios,
        } => check(*perturb_eta, *seeds, *seed, *scenarios),
        Command::Synth { out, seed } => synth(out, *seed),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(exit_code(&e))
    })
}
