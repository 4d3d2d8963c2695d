//! Lambda functions: the P&L-dependent probability level of a lambda
//! quantile, plus daily calibration of the exponential form against a
//! benchmark index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower level: just above the weight of one observation in a
/// 250-day sample.
pub const DEFAULT_LAMBDA_A: f64 = 1.001 / 250.0;
/// Default upper level, comparable to VaR at 1%.
pub const DEFAULT_LAMBDA_B: f64 = 0.01;

/// Parameters of the exponential form: λ_a left of `x_a`, β e^{αx} on
/// `[x_a, x_b]`, λ_b right of `x_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub x_a: f64,
    pub x_b: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ExpParams {
    /// Solves α, β so the curve is continuous at both thresholds.
    pub fn continuous(x_a: f64, x_b: f64, lambda_a: f64, lambda_b: f64) -> Result<Self> {
        if !(x_a.is_finite() && x_b.is_finite()) {
            return Err(Error::Validation("thresholds must be finite".into()));
        }
        if !(0.0 < lambda_a && lambda_a < lambda_b && lambda_b < 1.0) {
            return Err(Error::Validation(format!(
                "need 0 < lambda_a < lambda_b < 1, got ({lambda_a}, {lambda_b})"
            )));
        }
        if x_a >= x_b {
            return Err(Error::Calibration(format!("x_a = {x_a} is not below x_b = {x_b}")));
        }
        let log_ratio = (lambda_a / lambda_b).ln();
        let alpha = log_ratio / (x_a - x_b);
        let beta = lambda_a * (-(x_a / (x_a - x_b)) * log_ratio).exp();
        Ok(Self {
            x_a,
            x_b,
            lambda_a,
            lambda_b,
            alpha,
            beta,
        })
    }

    /// β e^{αx}, evaluated as λ_a e^{α(x − x_a)} so that rounding does not
    /// grow with |αx| and Λ(x_a) = λ_a exactly.
    #[inline]
    fn interior(&self, x: f64) -> f64 {
        self.lambda_a * (self.alpha * (x - self.x_a)).exp()
    }
}

/// Λ: ℝ → [λ_m, λ_M] ⊂ (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LambdaFunction {
    Constant { lambda: f64 },
    PiecewiseExp(ExpParams),
    /// Linear interpolation between knots, flat outside the knot range.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl LambdaFunction {
    pub fn constant(lambda: f64) -> Result<Self> {
        check_level(lambda)?;
        Ok(Self::Constant { lambda })
    }

    pub fn piecewise_exp(x_a: f64, x_b: f64, lambda_a: f64, lambda_b: f64) -> Result<Self> {
        Ok(Self::PiecewiseExp(ExpParams::continuous(x_a, x_b, lambda_a, lambda_b)?))
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Validation("piecewise-linear lambda needs at least one knot".into()));
        }
        for w in knots.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::Validation("knot abscissae must be strictly increasing".into()));
            }
        }
        for &(x, l) in &knots {
            if !x.is_finite() {
                return Err(Error::Validation("knot abscissae must be finite".into()));
            }
            check_level(l)?;
        }
        Ok(Self::PiecewiseLinear { knots })
    }

    /// Λ(x)
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant { lambda } => *lambda,
            Self::PiecewiseExp(p) => {
                if x < p.x_a {
                    p.lambda_a
                } else if x > p.x_b {
                    p.lambda_b
                } else {
                    p.interior(x)
                }
            }
            Self::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let k = knots.partition_point(|&(kx, _)| kx <= x);
                let (x0, l0) = knots[k - 1];
                let (x1, l1) = knots[k];
                l0 + (l1 - l0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Λ′(x). Piecewise-linear slopes are left-continuous at interior knots.
    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::PiecewiseExp(p) => {
                if (p.x_a..=p.x_b).contains(&x) {
                    p.alpha * p.interior(x)
                } else {
                    0.0
                }
            }
            Self::PiecewiseLinear { knots } => {
                let first = knots[0].0;
                let last = knots[knots.len() - 1].0;
                if x <= first || x > last {
                    return 0.0;
                }
                // segment (x_{k-1}, x_k] containing x
                let k = knots.partition_point(|&(kx, _)| kx < x);
                let (x0, l0) = knots[k - 1];
                let (x1, l1) = knots[k];
                (l1 - l0) / (x1 - x0)
            }
        }
    }

    /// (λ_m, λ_M)
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Constant { lambda } => (*lambda, *lambda),
            Self::PiecewiseExp(p) => (p.lambda_a, p.lambda_b),
            Self::PiecewiseLinear { knots } => knots
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, l)| (lo.min(l), hi.max(l))),
        }
    }

    /// Points where Λ′ is discontinuous.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Self::Constant { .. } => Vec::new(),
            Self::PiecewiseExp(p) => vec![p.x_a, p.x_b],
            Self::PiecewiseLinear { knots } => knots.iter().map(|k| k.0).collect(),
        }
    }

    /// True where Λ is locally constant.
    pub fn is_flat_at(&self, x: f64) -> bool {
        self.deriv(x) == 0.0
    }

    pub fn exp_params(&self) -> Option<&ExpParams> {
        match self {
            Self::PiecewiseExp(p) => Some(p),
            _ => None,
        }
    }

    /// Γ(z) = Λ(z + shift), represented in the same family.
    pub fn shifted(&self, shift: f64) -> Self {
        match self {
            Self::Constant { lambda } => Self::Constant { lambda: *lambda },
            Self::PiecewiseExp(p) => Self::PiecewiseExp(ExpParams {
                x_a: p.x_a - shift,
                x_b: p.x_b - shift,
                beta: p.beta * (p.alpha * shift).exp(),
                ..*p
            }),
            Self::PiecewiseLinear { knots } => Self::PiecewiseLinear {
                knots: knots.iter().map(|&(x, l)| (x - shift, l)).collect(),
            },
        }
    }
}

fn check_level(l: f64) -> Result<()> {
    if l > 0.0 && l < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("lambda level {l} outside (0, 1)")))
    }
}

/// Lower empirical quantile inf{x : F_n(x) ≥ p}, i.e. the ⌈pN⌉-th order statistic.
pub fn lower_empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("empty sample".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Validation(format!("quantile level {p} outside (0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank - 1])
}

/// Calibrates the exponential form for one date: `x_a` is the minimum over
/// both P&L windows, `x_b` the lower 1% empirical quantile of the benchmark
/// P&L (the negative of its VaR at 1%).
pub fn calibrate_exp(benchmark_pnl: &[f64], asset_pnl: &[f64], lambda_a: f64, lambda_b: f64) -> Result<LambdaFunction> {
    if benchmark_pnl.is_empty() || asset_pnl.is_empty() {
        return Err(Error::Validation("calibration windows must be non-empty".into()));
    }
    if !(0.0 < lambda_a && lambda_a < lambda_b && lambda_b < 1.0) {
        return Err(Error::Validation(format!(
            "need 0 < lambda_a < lambda_b < 1, got ({lambda_a}, {lambda_b})"
        )));
    }
    if benchmark_pnl.iter().chain(asset_pnl).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite P&L in calibration window".into()));
    }
    let x_a = benchmark_pnl
        .iter()
        .chain(asset_pnl)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let x_b = lower_empirical_quantile(benchmark_pnl, 0.01)?;
    if x_a >= x_b {
        return Err(Error::Calibration(format!(
            "degenerate window: minimum {x_a} is not below the 1% benchmark quantile {x_b}"
        )));
    }
    LambdaFunction::piecewise_exp(x_a, x_b, lambda_a, lambda_b)
}
