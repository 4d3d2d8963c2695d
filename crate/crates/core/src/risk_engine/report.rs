//! Per-date risk report and its CSV row layout.

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lambda_fn::LambdaFunction;
use crate::portfolio_ops::Composition;

use super::model::{PortfolioLaw, RiskModel};
use super::{evaluate, generalised_euler, residual_of, value_at_risk};

/// Diagnostics attached to a report row.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Flags {
    /// Λ′(−ρ) = 0, so η = 1.
    pub flat_region: bool,
    /// −ρ within 1e-9 of a knot of Λ.
    pub kink_proximity: bool,
    /// Scenarios whose operator partials were taken at a kink.
    pub kink_hits: usize,
    /// A conditional expectation could not be estimated at −ρ.
    pub non_estimable: bool,
    pub infinite_eta: bool,
    /// The operator's declared degree is not literally verified, so the
    /// Euler residual is reported but carries no guarantee.
    pub claim_unverified: bool,
    /// Error tag for dates that could not be evaluated.
    pub error: Option<String>,
}

impl Flags {
    /// `|`-separated list for the CSV flags column; empty when clean.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if let Some(e) = &self.error {
            parts.push(format!("error:{e}"));
        }
        for (on, name) in [
            (self.flat_region, "flat_region"),
            (self.kink_proximity, "kink_proximity"),
            (self.non_estimable, "non_estimable"),
            (self.infinite_eta, "infinite_eta"),
            (self.claim_unverified, "claim_unverified"),
        ] {
            if on {
                parts.push(name.to_string());
            }
        }
        if self.kink_hits > 0 {
            parts.push(format!("kink_hits={}", self.kink_hits));
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub date: Option<NaiveDate>,
    pub rho: f64,
    /// VaR at the comparison level, from the same portfolio law.
    pub var_ref: f64,
    pub eta: f64,
    pub gamma: f64,
    pub contributions: Vec<f64>,
    pub psi: Vec<f64>,
    pub euler_residual: f64,
    /// Σψ − ρ_Λ(1)
    pub allocation_gap: f64,
    pub lambda: Option<LambdaFunction>,
    pub flags: Flags,
}

impl RiskReport {
    /// Evaluates ρ, η, γ, contributions and ψ for one composition.
    ///
    /// Conditioning failures are recorded as `non_estimable` and leave NaN
    /// in the affected vector; any other failure is returned as an error.
    pub fn compute<M: RiskModel>(
        model: &M,
        u: &Composition,
        lambda: &LambdaFunction,
        var_level: f64,
        date: Option<NaiveDate>,
    ) -> Result<Self> {
        let n = model.n_assets();
        let ev = evaluate(model, u, lambda)?;
        let var_ref = value_at_risk(&ev.law, var_level, ev.law.bracket())?;
        let mut flags = Flags {
            flat_region: ev.slope == 0.0,
            kink_proximity: ev.crossing.near_kink,
            kink_hits: ev.law.kink_hits(),
            infinite_eta: ev.eta.is_infinite(),
            claim_unverified: model.homogeneity().claim_unverified,
            ..Flags::default()
        };
        let contributions = match ev.contributions() {
            Ok(c) => c,
            Err(Error::UnsupportedConditioningPoint { .. }) => {
                flags.non_estimable = true;
                vec![f64::NAN; n]
            }
            Err(e) => return Err(e),
        };
        let (psi, allocation_gap) = match generalised_euler(model, lambda) {
            Ok(a) => (a.psi, a.gap),
            Err(Error::UnsupportedConditioningPoint { .. }) => {
                flags.non_estimable = true;
                (vec![f64::NAN; n], f64::NAN)
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            date,
            rho: ev.rho(),
            var_ref,
            eta: ev.eta,
            gamma: ev.gamma(),
            euler_residual: residual_of(ev.gamma(), ev.rho(), u, &contributions),
            contributions,
            psi,
            allocation_gap,
            lambda: Some(lambda.clone()),
            flags,
        })
    }

    /// Placeholder row for a date whose evaluation failed.
    pub fn failed(date: Option<NaiveDate>, n: usize, lambda: Option<LambdaFunction>, error: &Error) -> Self {
        Self {
            date,
            rho: f64::NAN,
            var_ref: f64::NAN,
            eta: f64::NAN,
            gamma: f64::NAN,
            contributions: vec![f64::NAN; n],
            psi: vec![f64::NAN; n],
            euler_residual: f64::NAN,
            allocation_gap: f64::NAN,
            lambda,
            flags: Flags {
                error: Some(error.tag().to_string()),
                ..Flags::default()
            },
        }
    }

    pub fn is_failure(&self) -> bool {
        self.flags.error.is_some()
    }

    pub fn csv_header(n: usize) -> Vec<String> {
        let mut h: Vec<String> = ["date", "rho", "var_ref", "eta", "gamma"].map(String::from).to_vec();
        h.extend((1..=n).map(|i| format!("contrib_{i}")));
        h.extend((1..=n).map(|i| format!("psi_{i}")));
        h.extend(["residual", "flags", "x_a", "x_b", "alpha", "beta"].map(String::from));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.date.map(|d| d.to_string()).unwrap_or_default(),
            self.rho.to_string(),
            self.var_ref.to_string(),
            self.eta.to_string(),
            self.gamma.to_string(),
        ];
        r.extend(self.contributions.iter().map(f64::to_string));
        r.extend(self.psi.iter().map(f64::to_string));
        r.push(self.euler_residual.to_string());
        r.push(self.flags.render());
        let p = self.lambda.as_ref().and_then(LambdaFunction::exp_params);
        for v in [p.map(|p| p.x_a), p.map(|p| p.x_b), p.map(|p| p.alpha), p.map(|p| p.beta)] {
            r.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        r
    }
}
