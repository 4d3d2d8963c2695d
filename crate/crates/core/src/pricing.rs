//! Black-Scholes call valuation and historical volatility, used for full
//! revaluation of the option leg.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::normal;

/// Business days per year; τ = remaining_days / 250.
pub const DAYS_PER_YEAR: f64 = 250.0;

/// A European call written on the stock at `issue_date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub issue_date: NaiveDate,
    /// Life of the option in business days of the underlying series.
    pub maturity_days: usize,
    pub moneyness: f64,
    pub rate: f64,
    /// Fixed annual volatility. `None` re-estimates it on every valuation
    /// date from the trailing scenario window.
    pub vol: Option<f64>,
}

impl OptionSpec {
    /// Strike set at `moneyness` × the close on the issue date.
    pub fn at_issue(
        underlying: &PriceSeries,
        issue_date: NaiveDate,
        moneyness: f64,
        maturity_days: usize,
        rate: f64,
    ) -> Result<Self> {
        if !(moneyness.is_finite() && moneyness > 0.0) {
            return Err(Error::Validation(format!("moneyness must be positive, got {moneyness}")));
        }
        if maturity_days < 1 {
            return Err(Error::Validation("maturity_days must be at least 1".into()));
        }
        if !rate.is_finite() {
            return Err(Error::Validation("rate must be finite".into()));
        }
        let idx = underlying.index_of(issue_date)?;
        Ok(Self {
            strike: moneyness * underlying.closes()[idx],
            issue_date,
            maturity_days,
            moneyness,
            rate,
            vol: None,
        })
    }

    pub fn with_vol(mut self, vol: f64) -> Self {
        self.vol = Some(vol);
        self
    }

    /// Business days left until expiry at `t`; errors unless t ∈ [issue, expiry).
    pub fn remaining_days(&self, underlying: &PriceSeries, t: NaiveDate) -> Result<usize> {
        let issue = underlying.index_of(self.issue_date)?;
        let now = underlying.index_of(t)?;
        if now < issue {
            return Err(Error::Lifecycle(format!("{t} precedes the issue date {}", self.issue_date)));
        }
        let elapsed = now - issue;
        if elapsed >= self.maturity_days {
            return Err(Error::Lifecycle(format!("option expired before {t}")));
        }
        Ok(self.maturity_days - elapsed)
    }
}

/// Black-Scholes value of a European call.
///
/// `tau` is in years. At `tau == 0` or `sigma == 0` the deterministic limit
/// max(S − K e^{−rτ}, 0) is returned.
pub fn bs_call(spot: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> Result<f64> {
    if !(spot.is_finite() && strike.is_finite() && rate.is_finite() && sigma.is_finite() && tau.is_finite()) {
        return Err(Error::Validation("non-finite Black-Scholes input".into()));
    }
    if spot <= 0.0 || strike <= 0.0 || tau < 0.0 || sigma < 0.0 {
        return Err(Error::Validation(format!(
            "Black-Scholes inputs out of range (S={spot}, K={strike}, sigma={sigma}, tau={tau})"
        )));
    }
    let discounted_strike = strike * (-rate * tau).exp();
    let vol_sqrt_t = sigma * tau.sqrt();
    if vol_sqrt_t == 0.0 {
        return Ok((spot - discounted_strike).max(0.0));
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * tau) / vol_sqrt_t;
    let d2 = d1 - vol_sqrt_t;
    Ok(spot * normal::cdf(d1) - discounted_strike * normal::cdf(d2))
}

/// Annualised sample standard deviation (N − 1 denominator) of the last
/// `window` daily log-returns.
pub fn annualized_vol(series: &PriceSeries, window: usize) -> Result<f64> {
    annualized_vol_of(series.closes(), window)
}

pub(crate) fn annualized_vol_of(closes: &[f64], window: usize) -> Result<f64> {
    if window < 2 {
        return Err(Error::Validation("volatility window must be at least 2".into()));
    }
    if closes.len() < window + 1 {
        return Err(Error::Window {
            needed: window + 1,
            available: closes.len(),
        });
    }
    let tail = &closes[closes.len() - window - 1..];
    let returns: Vec<f64> = tail.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let mean = returns.iter().sum::<f64>() / window as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (window - 1) as f64;
    Ok((var * DAYS_PER_YEAR).sqrt())
}
