//! Self-check suite over internal fixtures: every identity the engine relies
//! on, evaluated with a gap and a tolerance.
//!
//! Analytic checks run on the closed-form Gaussian model; estimated checks
//! run the KDE/Nadaraya-Watson path on simulated Gaussian panels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lambda_fn::{calibrate_exp, LambdaFunction, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_B};
use crate::market_data::{simulate_gaussian_panel, ScenarioPanel};
use crate::normal;
use crate::portfolio_ops::{Composition, OperatorKind, PortfolioOperator};
use crate::risk_engine::{
    evaluate, fd_gradient, generalised_euler, lambda_quantile, residual_of, scaling_slope,
    linear_allocation_check, translation_identity_check, value_at_risk, EmpiricalModel, GaussianModel, RiskModel,
};

/// Asset means of the Gaussian fixture.
pub const FIXTURE_MEAN: [f64; 2] = [0.1, 0.05];
/// Correlation 0.8, volatilities (1, 1.2).
pub const FIXTURE_COV: [[f64; 2]; 2] = [[1.0, 0.96], [0.96, 1.44]];
/// Composition used wherever the all-ones composition would be too special.
pub const FIXTURE_UNITS: [f64; 2] = [1.5, 0.8];
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

pub fn fixture_cov() -> Vec<Vec<f64>> {
    FIXTURE_COV.iter().map(|r| r.to_vec()).collect()
}

/// Exponential lambda function whose sloped part contains the fixture crossings.
pub fn fixture_exp_lambda() -> LambdaFunction {
    LambdaFunction::piecewise_exp(-6.5, -4.0, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_B).expect("valid fixture")
}

pub fn fixture_panel(count: usize, seed: u64) -> Result<ScenarioPanel> {
    simulate_gaussian_panel(&FIXTURE_MEAN, &fixture_cov(), count, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Scenarios per simulated panel.
    pub scenarios: usize,
    /// Multiplies η wherever the suite forms γ = τη. Anything other than 1
    /// is a deliberate fault that the degree-based checks must catch.
    pub eta_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            scenarios: 100_000,
            eta_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub gap: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

impl CheckResult {
    fn new(name: &'static str, tolerance: f64, gap: Result<f64>) -> Self {
        match gap {
            Ok(gap) => Self {
                name,
                gap,
                tolerance,
                passed: gap <= tolerance,
                error: None,
            },
            Err(e) => Self {
                name,
                gap: f64::NAN,
                tolerance,
                passed: false,
                error: Some(e.to_string()),
            },
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn comp(u: &[f64]) -> Composition {
    Composition::new(u.to_vec()).expect("finite fixture units")
}

/// Euler residual relative to |ρ| with γ formed under the suite's η scale.
fn euler_gap<M: RiskModel>(model: &M, lambda: &LambdaFunction, eta_scale: f64) -> Result<f64> {
    let u = comp(&FIXTURE_UNITS);
    let ev = evaluate(model, &u, lambda)?;
    let gamma = ev.gamma() * eta_scale;
    Ok(residual_of(gamma, ev.rho(), &u, &ev.contributions()?).abs() / ev.rho().abs())
}

/// Σ_i ∂ρ/∂u_i(1) / γ(1) against ρ(1), with the gradient from finite differences.
fn degree_allocation_gap<M: RiskModel>(model: &M, lambda: &LambdaFunction, eta_scale: f64) -> Result<f64> {
    let ones = Composition::ones(model.n_assets());
    let ev = evaluate(model, &ones, lambda)?;
    let gamma = ev.gamma() * eta_scale;
    let total: f64 = fd_gradient(model, &ones, lambda, FD_STEP)?.iter().map(|g| g / gamma).sum();
    Ok(rel(total, ev.rho()))
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

/// A normal CDF and a piecewise-linear Λ that crosses it three times.
pub fn multi_crossing_fixture(rng: &mut ChaCha8Rng) -> (f64, f64, LambdaFunction) {
    let mu = rng.random_range(-1.0..1.0);
    let sd = rng.random_range(0.5..2.0);
    let f = |y: f64| normal::cdf((y - mu) / sd);
    // four knots in [μ − 2σ, μ + 2σ], at least 0.3σ apart
    let mut z = [0.0; 4];
    loop {
        for v in z.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        z.sort_by(f64::total_cmp);
        if z.windows(2).all(|w| w[1] - w[0] >= 0.3) {
            break;
        }
    }
    let knots = z
        .iter()
        .enumerate()
        .map(|(k, &zk)| {
            let x = mu + sd * zk;
            let offset = rng.random_range(0.02..0.1);
            // above F at even knots, below at odd ones
            let level = if k % 2 == 0 { f(x) + offset } else { f(x) - offset };
            (x, level.clamp(1e-3, 1.0 - 1e-3))
        })
        .collect();
    let lambda = LambdaFunction::piecewise_linear(knots).expect("increasing knots");
    (mu, sd, lambda)
}

/// Left end of the first cell of a uniform grid on [lo, hi] where F > Λ,
/// moved to the cell midpoint.
pub fn brute_force_crossing(f: impl Fn(f64) -> f64, lambda: &LambdaFunction, lo: f64, hi: f64, points: usize) -> Option<f64> {
    let step = (hi - lo) / points as f64;
    (0..=points)
        .map(|k| lo + k as f64 * step)
        .find(|&y| f(y) > lambda.eval(y))
        .map(|y| y - 0.5 * step)
}

/// Three assets: a Gaussian one, one that dominates it in every scenario,
/// and cash with a constant P&L.
pub fn allocation_fixture(count: usize, seed: u64) -> Result<ScenarioPanel> {
    let base = simulate_gaussian_panel(&FIXTURE_MEAN, &fixture_cov(), count, seed)?;
    let rows = base
        .scenarios()
        .map(|x| vec![x[0], x[0] + 0.2 + 0.3 * x[1].abs(), 0.02])
        .collect();
    ScenarioPanel::new(None, vec!["asset".into(), "dominant".into(), "cash".into()], rows)
}

fn smallest_crossing_gap(seed: u64, fixtures: usize, points: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<_> = (0..fixtures).map(|_| multi_crossing_fixture(&mut rng)).collect();
    let gaps = cases
        .par_iter()
        .map(|(mu, sd, lambda)| {
            let f = |y: f64| normal::cdf((y - mu) / sd);
            let rho = lambda_quantile(&f, lambda, (-8.0, 8.0))?;
            let oracle = brute_force_crossing(f, lambda, -8.0, 8.0, points)
                .ok_or_else(|| Error::Numeric("grid never crosses".into()))?;
            Ok((-rho - oracle).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

fn calibration_gap(seed: u64, windows: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..windows {
        let scale_b = rng.random_range(1.0..100.0);
        let scale_s = rng.random_range(0.1..10.0);
        let mut draw = |s: f64| -> Vec<f64> {
            (0..250)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect()
        };
        let bench = draw(scale_b);
        let stock = draw(scale_s);
        let l = calibrate_exp(&bench, &stock, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_B)?;
        let p = l.exp_params().expect("exponential form");
        worst = worst
            .max((l.eval(p.x_a) - DEFAULT_LAMBDA_A).abs())
            .max((l.eval(p.x_b) - DEFAULT_LAMBDA_B).abs());
    }
    if DEFAULT_LAMBDA_A != 1.001 / 250.0 {
        return Ok(f64::INFINITY);
    }
    Ok(worst)
}

/// Runs every check once.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckResult> {
    let s = opts.seed;
    let n = opts.scenarios;
    let scale = opts.eta_scale;
    let constant = LambdaFunction::constant(0.01).expect("valid level");
    let exp = fixture_exp_lambda();
    let mut out = Vec::new();

    let linear = GaussianModel::linear(FIXTURE_MEAN.to_vec(), fixture_cov()).expect("valid fixture");
    let centered = GaussianModel::mean_adjusted(FIXTURE_MEAN.to_vec(), fixture_cov()).expect("valid fixture");
    let panel = fixture_panel(n, s.wrapping_mul(1000));
    let linear_op = PortfolioOperator::linear(2);
    let mean_op = PortfolioOperator::new(OperatorKind::MeanAdjusted, 2).expect("valid operator");

    out.push(CheckResult::new(
        "var_equivalence",
        1e-6,
        (|| {
            let five = LambdaFunction::constant(0.05)?;
            let rho = lambda_quantile(&normal::cdf, &five, (-1.0, 1.0))?;
            let var = value_at_risk(&normal::cdf, 0.05, (-1.0, 1.0))?;
            if rho.to_bits() != var.to_bits() {
                return Ok(f64::INFINITY);
            }
            Ok((rho + normal::inv_cdf(0.05)).abs())
        })(),
    ));
    out.push(CheckResult::new(
        "eta_constant",
        0.0,
        (|| {
            let ev = evaluate(&linear, &comp(&FIXTURE_UNITS), &constant)?;
            Ok((ev.eta - 1.0).abs().max((ev.gamma() - 1.0).abs()))
        })(),
    ));
    out.push(CheckResult::new(
        "full_allocation_analytic",
        1e-8,
        generalised_euler(&linear, &exp).map(|a| a.gap.abs()),
    ));
    out.push(CheckResult::new(
        "full_allocation_degree",
        1e-6,
        degree_allocation_gap(&linear, &exp, scale),
    ));
    out.push(CheckResult::new(
        "full_allocation_kde",
        2e-2,
        panel.as_ref().map_err(clone).and_then(|p| {
            let a = generalised_euler(&EmpiricalModel::new(&linear_op, p)?, &exp)?;
            Ok(a.gap.abs() / a.rho.abs())
        }),
    ));

    for (name, model, lambda) in [
        ("euler_analytic_linear_const", &linear, &constant),
        ("euler_analytic_linear_exp", &linear, &exp),
        ("euler_analytic_mean_adj_const", &centered, &constant),
        ("euler_analytic_mean_adj_exp", &centered, &exp),
    ] {
        out.push(CheckResult::new(name, 1e-8, euler_gap(model, lambda, scale)));
    }
    for (name, op, lambda) in [
        ("euler_kde_linear_const", &linear_op, &constant),
        ("euler_kde_linear_exp", &linear_op, &exp),
        ("euler_kde_mean_adj_const", &mean_op, &constant),
        ("euler_kde_mean_adj_exp", &mean_op, &exp),
    ] {
        out.push(CheckResult::new(
            name,
            2e-2,
            panel
                .as_ref()
                .map_err(clone)
                .and_then(|p| euler_gap(&EmpiricalModel::new(op, p)?, lambda, scale)),
        ));
    }

    out.push(CheckResult::new(
        "gradient_analytic",
        1e-6,
        (|| {
            let u = comp(&FIXTURE_UNITS);
            let c = evaluate(&linear, &u, &constant)?.contributions()?;
            let fd = fd_gradient(&linear, &u, &constant, FD_STEP)?;
            Ok(c.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })(),
    ));
    out.push(CheckResult::new(
        "gradient_kde",
        2e-2,
        panel.as_ref().map_err(clone).and_then(|p| {
            let model = EmpiricalModel::new(&linear_op, p)?;
            let u = comp(&FIXTURE_UNITS);
            let c = evaluate(&model, &u, &exp)?.contributions()?;
            Ok(max_rel_gap(&c, &fd_gradient(&model, &u, &exp, FD_STEP)?))
        }),
    ));
    out.push(CheckResult::new(
        "restricted_domain_gradient",
        2e-2,
        panel.as_ref().map_err(clone).and_then(|p| {
            let lambda = LambdaFunction::piecewise_linear(vec![(-8.0, 0.004), (-3.5, 0.012)])?;
            let model = EmpiricalModel::new(&linear_op, p)?;
            let u = Composition::ones(2);
            let ev = evaluate(&model, &u, &lambda)?;
            if ev.slope == 0.0 {
                return Err(Error::Numeric("crossing left the sloped piece".into()));
            }
            Ok(max_rel_gap(&ev.contributions()?, &fd_gradient(&model, &u, &lambda, FD_STEP)?))
        }),
    ));

    out.push(CheckResult::new(
        "smallest_crossing",
        1e-6,
        smallest_crossing_gap(s.wrapping_add(17), 100, 10_000_000),
    ));
    out.push(CheckResult::new("calibration_continuity", 1e-12, calibration_gap(s.wrapping_add(29), 1000)));

    let shifted_panel = simulate_gaussian_panel(&[-0.1, -0.2], &fixture_cov(), n.min(20_000), s.wrapping_mul(1000) + 1);
    let ones = Composition::ones(2);
    out.push(CheckResult::new(
        "translation_zero_shift",
        0.0,
        shifted_panel
            .as_ref()
            .map_err(clone)
            .and_then(|p| Ok(translation_identity_check(&linear_op, &ones, p, &exp)?.gap.abs())),
    ));
    out.push(CheckResult::new(
        "translation_constant",
        1e-10,
        shifted_panel
            .as_ref()
            .map_err(clone)
            .and_then(|p| Ok(translation_identity_check(&mean_op, &ones, p, &constant)?.gap.abs())),
    ));
    out.push(CheckResult::new(
        "translation_exp",
        1e-11,
        shifted_panel
            .as_ref()
            .map_err(clone)
            .and_then(|p| Ok(translation_identity_check(&mean_op, &ones, p, &exp)?.gap.abs())),
    ));

    out.push(CheckResult::new(
        "law_invariance",
        0.0,
        shifted_panel.as_ref().map_err(clone).and_then(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(s.wrapping_add(43));
            let mut order: Vec<usize> = (0..p.window()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let shuffled = p.permuted(&order)?;
            let u = comp(&FIXTURE_UNITS);
            let a = evaluate(&EmpiricalModel::new(&linear_op, p)?, &u, &exp)?;
            let b = evaluate(&EmpiricalModel::new(&linear_op, &shuffled)?, &u, &exp)?;
            let same = a.rho().to_bits() == b.rho().to_bits()
                && a.eta.to_bits() == b.eta.to_bits()
                && a.gamma().to_bits() == b.gamma().to_bits();
            Ok(if same { 0.0 } else { (a.rho() - b.rho()).abs().max((a.eta - b.eta).abs()).max(f64::MIN_POSITIVE) })
        }),
    ));

    let allocation = allocation_fixture(n.min(20_000), s.wrapping_mul(1000) + 2)
        .and_then(|p| linear_allocation_check(&PortfolioOperator::linear(3), &p, &exp));
    out.push(CheckResult::new(
        "riskless_allocation",
        1e-12,
        allocation.as_ref().map_err(clone).and_then(|c| {
            if c.riskless_assets == 0 {
                return Err(Error::Numeric("fixture has no riskless asset".into()));
            }
            Ok(c.riskless_gap)
        }),
    ));
    out.push(CheckResult::new(
        "monotone_allocation",
        0.0,
        allocation.as_ref().map_err(clone).and_then(|c| {
            if c.dominated_pairs == 0 {
                return Err(Error::Numeric("fixture has no dominated pair".into()));
            }
            Ok(c.monotonicity_violations as f64)
        }),
    ));

    out.push(CheckResult::new(
        "first_order_scaling",
        1e-3,
        (|| {
            let u = comp(&FIXTURE_UNITS);
            let ev = evaluate(&linear, &u, &exp)?;
            let target = ev.gamma() * scale * ev.rho();
            Ok(rel(scaling_slope(&linear, &u, &exp, FD_STEP)?, target))
        })(),
    ));

    out
}

fn clone(e: &Error) -> Error {
    Error::Numeric(e.to_string())
}

/// Distribution of one check's gap over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub tolerance: f64,
    pub min: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub failures: usize,
    pub runs: usize,
}

/// Per-check quantiles over several suite runs (same check order in each).
pub fn summarize(runs: &[Vec<CheckResult>]) -> Vec<CheckSummary> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| {
            let mut gaps: Vec<f64> = runs.iter().map(|r| r[k].gap).collect();
            gaps.sort_by(f64::total_cmp);
            let q = |p: f64| gaps[((p * (gaps.len() - 1) as f64).round()) as usize];
            CheckSummary {
                name: first[k].name,
                tolerance: first[k].tolerance,
                min: q(0.0),
                median: q(0.5),
                p90: q(0.9),
                max: q(1.0),
                failures: runs.iter().filter(|r| !r[k].passed).count(),
                runs: runs.len(),
            }
        })
        .collect()
}
