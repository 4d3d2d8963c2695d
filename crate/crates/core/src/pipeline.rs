//! End-to-end historical-simulation workflow: per-date calibration of the
//! lambda function, scenario generation, risk reports and the composition
//! sweep, plus the synthetic stock/benchmark dataset.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda_fn::{calibrate_exp, LambdaFunction, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_B};
use crate::market_data::{
    generate_gbm, historical_scenarios, inner_join, load_price_series, trailing_differences, write_price_csv, GbmParams,
    PriceFormat, PriceSeries, ScenarioPanel, ShockMode,
};
use crate::portfolio_ops::{Composition, OperatorKind, PortfolioOperator};
use crate::pricing::OptionSpec;
use crate::risk_engine::{evaluate, EmpiricalModel, RiskReport};

/// Operator selection as it appears in configuration files and on the
/// command line (`linear`, `mean_adj`, `pospart`, `var_adj[:level]`,
/// `layer:D:L`, `power:tau`, `power_lq:tau`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorChoice {
    #[default]
    Linear,
    MeanAdj,
    Pospart,
    VarAdj { level: f64 },
    Layer { deductible: f64, limit: f64 },
    Power { tau: f64 },
    /// Power operator whose inner lambda quantile uses the date's calibrated Λ.
    PowerLq { tau: f64 },
}

impl OperatorChoice {
    pub fn materialize(&self, n: usize, lambda: &LambdaFunction) -> Result<PortfolioOperator> {
        let kind = match *self {
            OperatorChoice::Linear => OperatorKind::Linear,
            OperatorChoice::MeanAdj => OperatorKind::MeanAdjusted,
            OperatorChoice::Pospart => OperatorKind::PositivePart,
            OperatorChoice::VarAdj { level } => OperatorKind::VaRAdjusted { level },
            OperatorChoice::Layer { deductible, limit } => OperatorKind::ReinsuranceLayer { deductible, limit },
            OperatorChoice::Power { tau } => OperatorKind::Power { tau },
            OperatorChoice::PowerLq { tau } => OperatorKind::PowerLambdaAdjusted {
                tau,
                lambda: lambda.clone(),
            },
        };
        PortfolioOperator::new(kind, n)
    }
}

impl fmt::Display for OperatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorChoice::Linear => write!(f, "linear"),
            OperatorChoice::MeanAdj => write!(f, "mean_adj"),
            OperatorChoice::Pospart => write!(f, "pospart"),
            OperatorChoice::VarAdj { level } => write!(f, "var_adj:{level}"),
            OperatorChoice::Layer { deductible, limit } => write!(f, "layer:{deductible}:{limit}"),
            OperatorChoice::Power { tau } => write!(f, "power:{tau}"),
            OperatorChoice::PowerLq { tau } => write!(f, "power_lq:{tau}"),
        }
    }
}

impl FromStr for OperatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad operator parameter `{p}` in `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let arity = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::Validation(format!("operator `{name}` takes {k} parameter(s), got `{s}`")))
            }
        };
        Ok(match name {
            "linear" => {
                arity(0)?;
                OperatorChoice::Linear
            }
            "mean_adj" => {
                arity(0)?;
                OperatorChoice::MeanAdj
            }
            "pospart" => {
                arity(0)?;
                OperatorChoice::Pospart
            }
            "var_adj" if args.is_empty() => OperatorChoice::VarAdj { level: DEFAULT_LAMBDA_B },
            "var_adj" => {
                arity(1)?;
                OperatorChoice::VarAdj { level: args[0] }
            }
            "layer" => {
                arity(2)?;
                OperatorChoice::Layer {
                    deductible: args[0],
                    limit: args[1],
                }
            }
            "power" => {
                arity(1)?;
                OperatorChoice::Power { tau: args[0] }
            }
            "power_lq" => {
                arity(1)?;
                OperatorChoice::PowerLq { tau: args[0] }
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown operator `{other}` (expected linear|mean_adj|pospart|var_adj|layer|power|power_lq)"
                )))
            }
        })
    }
}

/// Run parameters. Every field has a default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stock closes; with `benchmark_csv` unset too, the synthetic dataset is used.
    pub asset_csv: Option<PathBuf>,
    pub benchmark_csv: Option<PathBuf>,
    pub moneyness: f64,
    pub maturity_days: usize,
    pub rate: f64,
    /// Fixed option volatility; re-estimated per date when absent.
    pub option_vol: Option<f64>,
    /// Option issue date; defaults to the first date with a full window behind it.
    pub issue_date: Option<NaiveDate>,
    pub window: usize,
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// Units of (stock, call).
    pub units: Vec<f64>,
    pub operator: OperatorChoice,
    pub out: PathBuf,
    pub seed: u64,
    pub shock_mode: ShockMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            asset_csv: None,
            benchmark_csv: None,
            moneyness: 0.9,
            maturity_days: 500,
            rate: 0.02,
            option_vol: None,
            issue_date: None,
            window: 250,
            lambda_a: DEFAULT_LAMBDA_A,
            lambda_b: DEFAULT_LAMBDA_B,
            units: vec![50.0, 50.0],
            operator: OperatorChoice::Linear,
            out: PathBuf::from("out"),
            seed: 7,
            shock_mode: ShockMode::Abs,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        if !(0.0 < self.lambda_a && self.lambda_a < self.lambda_b && self.lambda_b < 1.0) {
            return invalid(format!(
                "need 0 < lambda_a < lambda_b < 1, got lambda_a={} lambda_b={}",
                self.lambda_a, self.lambda_b
            ));
        }
        if self.window < 2 {
            return invalid(format!("window must be at least 2, got {}", self.window));
        }
        if self.units.len() != 2 {
            return invalid(format!("units must list (stock, call), got {} entries", self.units.len()));
        }
        if self.units.iter().any(|u| !u.is_finite()) {
            return invalid("units must be finite".into());
        }
        if !(self.moneyness.is_finite() && self.moneyness > 0.0) {
            return invalid(format!("moneyness must be positive, got {}", self.moneyness));
        }
        if self.maturity_days < 2 {
            return invalid("maturity_days must be at least 2".into());
        }
        if !self.rate.is_finite() {
            return invalid("rate must be finite".into());
        }
        if let Some(v) = self.option_vol {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("option_vol must be non-negative, got {v}"));
            }
        }
        if self.asset_csv.is_some() != self.benchmark_csv.is_some() {
            return invalid("asset_csv and benchmark_csv must be given together".into());
        }
        // catches bad operator parameters before any data is touched
        self.operator.materialize(2, &LambdaFunction::constant(self.lambda_b)?)?;
        Ok(())
    }

    pub fn composition(&self) -> Result<Composition> {
        Composition::new(self.units.clone())
    }
}

/// Synthetic stock and benchmark paths long enough for the default run.
pub fn synthetic_dataset(seed: u64) -> Result<(PriceSeries, PriceSeries)> {
    let days = 760;
    let stock = generate_gbm(
        "stock",
        GbmParams {
            s0: 50.0,
            mu: 0.05,
            sigma: 0.25,
            days,
            seed,
        },
    )?;
    let benchmark = generate_gbm(
        "benchmark",
        GbmParams {
            s0: 4500.0,
            mu: 0.06,
            sigma: 0.18,
            days,
            seed: seed.wrapping_add(1),
        },
    )?;
    Ok((stock, benchmark))
}

/// Writes `stock.csv` and `benchmark.csv` into `dir`.
pub fn write_synthetic(dir: &Path, seed: u64) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (stock, benchmark) = synthetic_dataset(seed)?;
    let sp = dir.join("stock.csv");
    let bp = dir.join("benchmark.csv");
    write_price_csv(&stock, fs::File::create(&sp)?)?;
    write_price_csv(&benchmark, fs::File::create(&bp)?)?;
    Ok((sp, bp))
}

/// Loaded, date-aligned inputs for one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub stock: PriceSeries,
    pub benchmark: PriceSeries,
    pub option: OptionSpec,
}

impl Workspace {
    /// Validates the config and loads (or synthesises) the price data.
    pub fn load(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (stock, benchmark) = match (&config.asset_csv, &config.benchmark_csv) {
            (Some(a), Some(b)) => (
                load_price_series(a, PriceFormat::Csv)?,
                load_price_series(b, PriceFormat::Csv)?,
            ),
            _ => synthetic_dataset(config.seed)?,
        };
        Self::from_series(config, stock, benchmark)
    }

    pub fn from_series(config: RunConfig, stock: PriceSeries, benchmark: PriceSeries) -> Result<Self> {
        config.validate()?;
        let (stock, benchmark) = inner_join(&stock, &benchmark)?;
        let issue = match config.issue_date {
            Some(d) => d,
            None => *stock.dates().get(config.window).ok_or(Error::Window {
                needed: config.window + 2,
                available: stock.len(),
            })?,
        };
        let mut option = OptionSpec::at_issue(&stock, issue, config.moneyness, config.maturity_days, config.rate)?;
        option.vol = config.option_vol;
        Ok(Self {
            config,
            stock,
            benchmark,
            option,
        })
    }

    /// Business days strictly after issue and strictly before expiry,
    /// limited to the available data.
    pub fn valuation_dates(&self) -> Vec<NaiveDate> {
        let issue = self.stock.position(self.option.issue_date).expect("issue date is in the series");
        let last = (issue + self.option.maturity_days - 1).min(self.stock.len() - 1);
        self.stock.dates()[(issue + 1).min(last + 1)..=last].to_vec()
    }

    /// Λ_t calibrated on the trailing benchmark and stock windows.
    pub fn calibrate(&self, t: NaiveDate) -> Result<LambdaFunction> {
        let bench = trailing_differences(&self.benchmark, t, self.config.window)?;
        let stock = trailing_differences(&self.stock, t, self.config.window)?;
        calibrate_exp(&bench, &stock, self.config.lambda_a, self.config.lambda_b)
    }

    pub fn panel(&self, t: NaiveDate) -> Result<ScenarioPanel> {
        historical_scenarios(&self.stock, &self.option, t, self.config.window, self.config.shock_mode)
    }

    fn report_at(&self, t: NaiveDate, lambda: &LambdaFunction, u: &Composition) -> Result<RiskReport> {
        let panel = self.panel(t)?;
        let op = self.config.operator.materialize(panel.n_assets(), lambda)?;
        let model = EmpiricalModel::new(&op, &panel)?;
        RiskReport::compute(&model, u, lambda, self.config.lambda_b, Some(t))
    }

    /// Risk report for one date; failures become flagged rows.
    pub fn report(&self, t: NaiveDate) -> RiskReport {
        let n = self.config.units.len();
        let lambda = match self.calibrate(t) {
            Ok(l) => l,
            Err(e) => return RiskReport::failed(Some(t), n, None, &e),
        };
        let u = match self.config.composition() {
            Ok(u) => u,
            Err(e) => return RiskReport::failed(Some(t), n, Some(lambda), &e),
        };
        self.report_at(t, &lambda, &u)
            .unwrap_or_else(|e| RiskReport::failed(Some(t), n, Some(lambda), &e))
    }

    /// Reports for every valuation date, in date order.
    pub fn timeseries(&self) -> Vec<RiskReport> {
        self.valuation_dates().par_iter().map(|&t| self.report(t)).collect()
    }

    /// Contributions and γ on one date for each composition in `grid`.
    pub fn sweep(&self, t: NaiveDate, grid: &[Composition]) -> Vec<SweepRow> {
        let lambda = self.calibrate(t);
        let panel = self.panel(t);
        grid.par_iter()
            .map(|u| {
                let row = SweepRow {
                    date: t,
                    units: u.units().to_vec(),
                    contributions: vec![f64::NAN; u.len()],
                    gamma: f64::NAN,
                    flags: String::new(),
                };
                let result = (|| {
                    let lambda = lambda.as_ref().map_err(clone_error)?;
                    let panel = panel.as_ref().map_err(clone_error)?;
                    let op = self.config.operator.materialize(panel.n_assets(), lambda)?;
                    let model = EmpiricalModel::new(&op, panel)?;
                    let ev = evaluate(&model, u, lambda)?;
                    Ok::<_, Error>((ev.contributions()?, ev.gamma()))
                })();
                match result {
                    Ok((contributions, gamma)) => SweepRow {
                        contributions,
                        gamma,
                        ..row
                    },
                    Err(e) => SweepRow {
                        flags: format!("error:{}", e.tag()),
                        ..row
                    },
                }
            })
            .collect()
    }
}

/// Errors are not `Clone` (they wrap I/O errors); shared per-date failures
/// are re-raised by tag and message.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::Window { needed, available } => Error::Window {
            needed: *needed,
            available: *available,
        },
        Error::Lifecycle(m) => Error::Lifecycle(m.clone()),
        Error::Calibration(m) => Error::Calibration(m.clone()),
        Error::MissingData(m) => Error::MissingData(m.clone()),
        Error::Validation(m) => Error::Validation(m.clone()),
        other => Error::Numeric(other.to_string()),
    }
}

/// The (10, 90), (11, 89), …, (90, 10) composition grid.
pub fn sweep_grid() -> Vec<Composition> {
    (10..=90)
        .map(|s| Composition::new(vec![s as f64, (100 - s) as f64]).expect("finite units"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub date: NaiveDate,
    pub units: Vec<f64>,
    pub contributions: Vec<f64>,
    pub gamma: f64,
    pub flags: String,
}

/// Per-date Λ parameters for audit replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRecord {
    pub date: Option<NaiveDate>,
    pub lambda: Option<LambdaFunction>,
}

pub fn write_timeseries_csv<W: std::io::Write>(reports: &[RiskReport], n: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RiskReport::csv_header(n))?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "u_s", "u_c", "contrib_s", "contrib_c", "gamma", "flags"])?;
    for r in rows {
        let mut rec = vec![r.date.to_string()];
        rec.extend(r.units.iter().map(f64::to_string));
        rec.extend(r.contributions.iter().map(f64::to_string));
        rec.push(r.gamma.to_string());
        rec.push(r.flags.clone());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Counts used by the CLI summary line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub rows: usize,
    pub failures: usize,
    pub flat: usize,
    pub interior: usize,
    pub non_estimable: usize,
}

impl RunSummary {
    pub fn of(reports: &[RiskReport]) -> Self {
        let mut s = Self {
            rows: reports.len(),
            ..Self::default()
        };
        for r in reports {
            if r.is_failure() {
                s.failures += 1;
            } else if r.flags.flat_region {
                s.flat += 1;
            } else {
                s.interior += 1;
            }
            s.non_estimable += r.flags.non_estimable as usize;
        }
        s
    }
}

/// Writes `timeseries.csv`, `timeseries.json` and `lambda_params.json` into
/// `dir` and returns the reports.
pub fn run_timeseries(ws: &Workspace, dir: &Path) -> Result<Vec<RiskReport>> {
    fs::create_dir_all(dir)?;
    let reports = ws.timeseries();
    let n = ws.config.units.len();
    write_timeseries_csv(&reports, n, fs::File::create(dir.join("timeseries.csv"))?)?;
    serde_json::to_writer_pretty(fs::File::create(dir.join("timeseries.json"))?, &reports)?;
    let lambdas: Vec<LambdaRecord> = reports
        .iter()
        .map(|r| LambdaRecord {
            date: r.date,
            lambda: r.lambda.clone(),
        })
        .collect();
    serde_json::to_writer_pretty(fs::File::create(dir.join("lambda_params.json"))?, &lambdas)?;
    Ok(reports)
}

/// Runs the sweep on each date and writes `sweep.csv` into `dir`.
pub fn run_sweep(ws: &Workspace, dates: &[NaiveDate], dir: &Path) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(dir)?;
    let grid = sweep_grid();
    let rows: Vec<SweepRow> = dates.iter().flat_map(|&t| ws.sweep(t, &grid)).collect();
    write_sweep_csv(&rows, fs::File::create(dir.join("sweep.csv"))?)?;
    Ok(rows)
}
