//! Price series ingestion, historical-simulation scenario panels and
//! synthetic market data.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::{annualized_vol_of, bs_call, OptionSpec, DAYS_PER_YEAR};

/// Daily close prices of one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    /// Builds a series from rows in any order. Rows are sorted by date;
    /// duplicate dates and non-positive prices are rejected.
    pub fn new(ticker: impl Into<String>, rows: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate date {}", w[0].0)));
            }
        }
        for (date, close) in &rows {
            if !close.is_finite() || *close <= 0.0 {
                return Err(Error::Validation(format!(
                    "non-positive price {close} on {date}"
                )));
            }
        }
        let (dates, closes) = rows.into_iter().unzip();
        Ok(Self {
            ticker: ticker.into(),
            dates,
            closes,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of `date` in the series.
    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub(crate) fn index_of(&self, date: NaiveDate) -> Result<usize> {
        self.position(date).ok_or_else(|| {
            Error::MissingData(format!("{} has no observation on {date}", self.ticker))
        })
    }
}

/// Supported on-disk price formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceFormat {
    /// `date,close` with a header row and ISO-8601 dates.
    Csv,
}

/// Loads a price series from disk. The ticker is taken from the file stem.
pub fn load_price_series(path: &Path, format: PriceFormat) -> Result<PriceSeries> {
    let ticker = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    match format {
        PriceFormat::Csv => read_price_csv(file, ticker),
    }
}

/// Parses `date,close` CSV content.
pub fn read_price_csv<R: Read>(reader: R, ticker: impl Into<String>) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "date" || &headers[1] != "close" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `date,close`".into(),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let close = f64::from_str(&record[1]).map_err(|e| Error::Parse {
            line,
            message: format!("bad price `{}`: {e}", &record[1]),
        })?;
        rows.push((date, close));
    }
    PriceSeries::new(ticker, rows)
}

pub fn write_price_csv<W: Write>(series: &PriceSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "close"])?;
    for (d, c) in series.dates.iter().zip(&series.closes) {
        wtr.write_record([d.format("%Y-%m-%d").to_string(), format!("{c}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// X_t = S_t − S_{t−1}.
pub fn asset_pnl(series: &PriceSeries, t: NaiveDate) -> Result<f64> {
    let idx = series.index_of(t)?;
    if idx == 0 {
        return Err(Error::MissingData(format!(
            "{t} is the first observation of {}; no predecessor",
            series.ticker
        )));
    }
    Ok(series.closes[idx] - series.closes[idx - 1])
}

/// The `window` daily differences S_{t−i} − S_{t−i−1}, i = 1..=window,
/// most recent first.
pub fn trailing_differences(series: &PriceSeries, t: NaiveDate, window: usize) -> Result<Vec<f64>> {
    let idx = series.index_of(t)?;
    if idx < window + 1 {
        return Err(Error::Window {
            needed: window + 2,
            available: idx + 1,
        });
    }
    let c = &series.closes;
    Ok((1..=window).map(|i| c[idx - i] - c[idx - i - 1]).collect())
}

/// How historical moves are transplanted onto today's price.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockMode {
    /// S_t + (S_{t−i} − S_{t−i−1})
    #[default]
    Abs,
    /// S_t · S_{t−i} / S_{t−i−1}
    Rel,
}

impl FromStr for ShockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(ShockMode::Abs),
            "rel" => Ok(ShockMode::Rel),
            other => Err(Error::Validation(format!(
                "unknown shock mode `{other}` (expected abs|rel)"
            ))),
        }
    }
}

/// N × n matrix of simulated per-asset P&L for one valuation date.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPanel {
    date: Option<NaiveDate>,
    asset_labels: Vec<String>,
    pnl: Vec<f64>,
    window: usize,
}

impl ScenarioPanel {
    /// `rows[i]` is scenario i across all assets.
    pub fn new(date: Option<NaiveDate>, asset_labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = asset_labels.len();
        if n == 0 {
            return Err(Error::Validation("panel needs at least one asset".into()));
        }
        if rows.is_empty() {
            return Err(Error::Validation("panel needs at least one scenario".into()));
        }
        let window = rows.len();
        let mut pnl = Vec::with_capacity(window * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite scenario value".into()));
            }
            pnl.extend(row);
        }
        Ok(Self {
            date,
            asset_labels,
            pnl,
            window,
        })
    }

    /// Builds a panel from per-asset columns of equal length.
    pub fn from_columns(date: Option<NaiveDate>, asset_labels: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.len() != asset_labels.len() {
            return Err(Error::Dimension {
                expected: asset_labels.len(),
                got: columns.len(),
            });
        }
        let len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::Validation("panel columns differ in length".into()));
        }
        let rows = (0..len).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::new(date, asset_labels, rows)
    }

    pub fn date(&self) -> Option<NaiveDate> {
        self.date
    }

    pub fn asset_labels(&self) -> &[String] {
        &self.asset_labels
    }

    /// Number of scenarios N.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of assets n.
    pub fn n_assets(&self) -> usize {
        self.asset_labels.len()
    }

    pub fn scenario(&self, i: usize) -> &[f64] {
        let n = self.n_assets();
        &self.pnl[i * n..(i + 1) * n]
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &[f64]> {
        self.pnl.chunks_exact(self.n_assets())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scenarios().map(|s| s[j]).collect()
    }

    /// Same panel with scenarios reordered; `order[k]` is the source row of row k.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows = order.iter().map(|&i| self.scenario(i).to_vec()).collect();
        Self::new(self.date, self.asset_labels.clone(), rows)
    }

    /// Tidy export with header `scenario,asset,pnl` (scenarios numbered from 1).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["scenario", "asset", "pnl"])?;
        for (i, row) in self.scenarios().enumerate() {
            for (label, v) in self.asset_labels.iter().zip(row) {
                wtr.write_record([(i + 1).to_string(), label.clone(), format!("{v}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full-revaluation historical simulation of a (stock, call) pair at date `t`.
///
/// Scenario i applies the i-th most recent daily move before `t` to today's
/// price. The call is repriced one business day closer to expiry, so option
/// scenarios include theta.
pub fn historical_scenarios(
    stock: &PriceSeries,
    option: &OptionSpec,
    t: NaiveDate,
    window: usize,
    shock_mode: ShockMode,
) -> Result<ScenarioPanel> {
    let idx = stock.index_of(t)?;
    let remaining = option.remaining_days(stock, t)?;
    if idx < window + 1 {
        return Err(Error::Window {
            needed: window + 2,
            available: idx + 1,
        });
    }
    let closes = stock.closes();
    let spot = closes[idx];
    let vol = match option.vol {
        Some(v) => v,
        None => annualized_vol_of(&closes[..=idx], window)?,
    };
    let tau_now = remaining as f64 / DAYS_PER_YEAR;
    let tau_next = (remaining - 1) as f64 / DAYS_PER_YEAR;
    let value_now = bs_call(spot, option.strike, option.rate, vol, tau_now)?;

    let mut rows = Vec::with_capacity(window);
    for i in 1..=window {
        let (prev, cur) = (closes[idx - i - 1], closes[idx - i]);
        let shock = match shock_mode {
            ShockMode::Abs => cur - prev,
            ShockMode::Rel => spot * (cur / prev - 1.0),
        };
        let shocked = spot + shock;
        let value = if shocked > 0.0 {
            bs_call(shocked, option.strike, option.rate, vol, tau_next)?
        } else {
            0.0
        };
        rows.push(vec![shock, value - value_now]);
    }
    ScenarioPanel::new(
        Some(t),
        vec![stock.ticker().to_string(), format!("{}_call", stock.ticker())],
        rows,
    )
}

/// Restricts two series to their common dates.
pub fn inner_join(a: &PriceSeries, b: &PriceSeries) -> Result<(PriceSeries, PriceSeries)> {
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a.dates[i].cmp(&b.dates[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ra.push((a.dates[i], a.closes[i]));
                rb.push((b.dates[j], b.closes[j]));
                i += 1;
                j += 1;
            }
        }
    }
    Ok((PriceSeries::new(a.ticker.clone(), ra)?, PriceSeries::new(b.ticker.clone(), rb)?))
}

/// Weekday calendar starting at `start` (rolled forward to a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Parameters of a synthetic geometric Brownian motion path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    /// Annual drift.
    pub mu: f64,
    /// Annual volatility.
    pub sigma: f64,
    /// Number of observations, s0 included.
    pub days: usize,
    pub seed: u64,
}

/// Geometric Brownian motion sampled at 250 steps per year on a weekday
/// calendar starting 2018-01-02.
pub fn generate_gbm(ticker: &str, params: GbmParams) -> Result<PriceSeries> {
    let GbmParams { s0, mu, sigma, days, seed } = params;
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::Validation(format!("s0 must be positive, got {s0}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) || !mu.is_finite() {
        return Err(Error::Validation(format!("invalid drift/vol ({mu}, {sigma})")));
    }
    if days < 1 {
        return Err(Error::Validation("days must be at least 1".into()));
    }
    let dt = 1.0 / DAYS_PER_YEAR;
    let drift = (mu - 0.5 * sigma * sigma) * dt;
    let diffusion = sigma * dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2018, 1, 2).expect("valid date");
    let dates = business_days(start, days);

    let mut log_level = 0.0;
    let mut rows = Vec::with_capacity(days);
    rows.push((dates[0], s0));
    for date in dates.iter().skip(1) {
        let z: f64 = StandardNormal.sample(&mut rng);
        log_level += drift + diffusion * z;
        rows.push((*date, s0 * log_level.exp()));
    }
    PriceSeries::new(ticker, rows)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = cov.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if cov[i].len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: cov[i].len(),
            });
        }
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = cov[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::Validation("covariance is not positive definite".into()));
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// `count` i.i.d. draws from N(mean, cov), reproducible for a fixed seed.
pub fn simulate_gaussian_panel(mean: &[f64], cov: &[Vec<f64>], count: usize, seed: u64) -> Result<ScenarioPanel> {
    let n = mean.len();
    if cov.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: cov.len(),
        });
    }
    let l = cholesky(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n];
    let rows = (0..count)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            (0..n)
                .map(|i| mean[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
                .collect()
        })
        .collect();
    let labels = (1..=n).map(|i| format!("x{i}")).collect();
    ScenarioPanel::new(None, labels, rows)
}
