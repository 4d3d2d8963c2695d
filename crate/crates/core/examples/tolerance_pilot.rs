//! Monte-Carlo pilot for the estimator-noise tolerances of the KDE /
//! Nadaraya-Watson path.
//!
//! Runs the Gaussian fixture over 50 seeds at N = 100 000 scenarios and
//! prints, for each estimated quantity, the median, the 99th percentile and
//! the maximum relative error. The 2% tolerances used by the test suites are
//! checked against the 99th percentile.
//!
//! cargo run --release -p lambdaq-core --example tolerance_pilot [seeds] [scenarios]

use lambdaq::checks::{fixture_cov, fixture_exp_lambda, fixture_panel, FD_STEP, FIXTURE_MEAN, FIXTURE_UNITS};
use lambdaq::normal;
use lambdaq::portfolio_ops::{Composition, OperatorKind, PortfolioOperator};
use lambdaq::risk_engine::{evaluate, fd_gradient, generalised_euler, residual_of, EmpiricalModel};
use lambdaq::{LambdaFunction, Result};

const TOLERANCE: f64 = 2e-2;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Closed-form Euler-VaR contributions −μ_i − (Σu)_i Φ⁻¹(λ) / σ_Y.
fn gaussian_contributions(u: &[f64], level: f64) -> Vec<f64> {
    let cov = fixture_cov();
    let cu: Vec<f64> = cov.iter().map(|r| r.iter().zip(u).map(|(c, u)| c * u).sum()).collect();
    let sd = u.iter().zip(&cu).map(|(u, c)| u * c).sum::<f64>().sqrt();
    let z = normal::inv_cdf(level);
    FIXTURE_MEAN.iter().zip(&cu).map(|(m, c)| -m - c * z / sd).collect()
}

fn metrics(seed: u64, scenarios: usize) -> Result<Vec<(&'static str, f64)>> {
    let panel = fixture_panel(scenarios, seed)?;
    let constant = LambdaFunction::constant(0.01)?;
    let exp = fixture_exp_lambda();
    let linear = PortfolioOperator::linear(2);
    let mean_adj = PortfolioOperator::new(OperatorKind::MeanAdjusted, 2)?;
    let lin_model = EmpiricalModel::new(&linear, &panel)?;
    let u = Composition::new(FIXTURE_UNITS.to_vec())?;
    let mut out = Vec::new();

    let c = evaluate(&lin_model, &u, &constant)?.contributions()?;
    let oracle = gaussian_contributions(&FIXTURE_UNITS, 0.01);
    out.push(("contribution_vs_closed_form", rel(c[0], oracle[0]).max(rel(c[1], oracle[1]))));

    let alloc = generalised_euler(&lin_model, &exp)?;
    out.push(("full_allocation", alloc.gap.abs() / alloc.rho.abs()));

    for (name, op, lambda) in [
        ("euler_linear_const", &linear, &constant),
        ("euler_linear_exp", &linear, &exp),
        ("euler_mean_adj_const", &mean_adj, &constant),
        ("euler_mean_adj_exp", &mean_adj, &exp),
    ] {
        let ev = evaluate(&EmpiricalModel::new(op, &panel)?, &u, lambda)?;
        let r = residual_of(ev.gamma(), ev.rho(), &u, &ev.contributions()?);
        out.push((name, r.abs() / ev.rho().abs()));
    }

    for (name, lambda) in [("gradient_const", &constant), ("gradient_exp", &exp)] {
        let c = evaluate(&lin_model, &u, lambda)?.contributions()?;
        let fd = fd_gradient(&lin_model, &u, lambda, FD_STEP)?;
        out.push((name, rel(c[0], fd[0]).max(rel(c[1], fd[1]))));
    }

    let piecewise = LambdaFunction::piecewise_linear(vec![(-8.0, 0.004), (-3.5, 0.012)])?;
    let ones = Composition::ones(2);
    let c = evaluate(&lin_model, &ones, &piecewise)?.contributions()?;
    let fd = fd_gradient(&lin_model, &ones, &piecewise, FD_STEP)?;
    out.push(("gradient_piecewise_linear", rel(c[0], fd[0]).max(rel(c[1], fd[1]))));
    Ok(out)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[((p * (sorted.len() - 1) as f64).ceil()) as usize]
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let scenarios: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);

    let mut table: Vec<(&'static str, Vec<f64>)> = Vec::new();
    for seed in 0..seeds {
        for (k, (name, v)) in metrics(seed, scenarios)?.into_iter().enumerate() {
            if table.len() <= k {
                table.push((name, Vec::new()));
            }
            table[k].1.push(v);
        }
    }

    println!("{seeds} seeds, N = {scenarios}");
    println!("{:<28} {:>10} {:>10} {:>10}  within {TOLERANCE}", "quantity", "median", "p99", "max");
    for (name, mut v) in table {
        v.sort_by(f64::total_cmp);
        let p99 = quantile(&v, 0.99);
        println!(
            "{name:<28} {:>10.4e} {:>10.4e} {:>10.4e}  {}",
            quantile(&v, 0.5),
            p99,
            v[v.len() - 1],
            if p99 <= TOLERANCE { "yes" } else { "NO" }
        );
    }
    Ok(())
}
