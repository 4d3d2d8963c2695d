//! End-to-end behaviour of the engine on panels and price paths built here.

use lambdaq::market_data::{generate_gbm, simulate_gaussian_panel, GbmParams, ScenarioPanel};
use lambdaq::pipeline::{run_timeseries, synthetic_dataset, OperatorChoice, RunConfig, Workspace};
use lambdaq::portfolio_ops::{Composition, OperatorKind, PortfolioOperator};
use lambdaq::risk_engine::{evaluate, generalised_euler, EmpiricalModel, GaussianModel, RiskReport};
use lambdaq::LambdaFunction;

fn comp(u: &[f64]) -> Composition {
    Composition::new(u.to_vec()).unwrap()
}

fn exp_lambda() -> LambdaFunction {
    LambdaFunction::piecewise_exp(-6.0, -3.0, 1.001 / 250.0, 0.01).unwrap()
}

#[test]
fn identical_assets_share_contributions_and_allocation() {
    let base = simulate_gaussian_panel(&[0.02], &[vec![1.5]], 50_000, 3).unwrap();
    let x = base.column(0);
    let panel = ScenarioPanel::from_columns(None, vec!["a".into(), "b".into()], &[x.clone(), x]).unwrap();
    let op = PortfolioOperator::linear(2);
    let model = EmpiricalModel::new(&op, &panel).unwrap();

    let c = evaluate(&model, &comp(&[1.0, 1.0]), &exp_lambda()).unwrap().contributions().unwrap();
    assert_eq!(c[0], c[1]);

    let a = generalised_euler(&model, &exp_lambda()).unwrap();
    assert_eq!(a.psi[0], a.psi[1]);
    // both halves of ρ(1), up to the kernel-regression error
    for p in &a.psi {
        assert!((p - a.rho / 2.0).abs() <= 2e-2 * a.rho.abs(), "{a:?}");
    }
}

#[test]
fn exchangeable_assets_get_similar_contributions() {
    let cov = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
    let panel = simulate_gaussian_panel(&[0.0, 0.0], &cov, 100_000, 21).unwrap();
    let op = PortfolioOperator::linear(2);
    let model = EmpiricalModel::new(&op, &panel).unwrap();
    let c = evaluate(&model, &comp(&[50.0, 50.0]), &LambdaFunction::constant(0.01).unwrap())
        .unwrap()
        .contributions()
        .unwrap();
    assert!((c[0] - c[1]).abs() <= 2e-2 * c[0].abs(), "{c:?}");
}

#[test]
fn one_asset_allocation_is_the_whole_measure() {
    let model = GaussianModel::linear(vec![0.3], vec![vec![2.0]]).unwrap();
    let a = generalised_euler(&model, &exp_lambda()).unwrap();
    assert!((a.psi[0] - a.rho).abs() <= 1e-12 * a.rho.abs(), "{a:?}");
}

#[test]
fn out_of_the_money_call_stops_contributing_near_expiry() {
    // a stock in steady decline leaves the 90% call far out of the money
    let stock = generate_gbm(
        "stock",
        GbmParams {
            s0: 50.0,
            mu: -0.8,
            sigma: 0.2,
            days: 760,
            seed: 5,
        },
    )
    .unwrap();
    let (_, benchmark) = synthetic_dataset(7).unwrap();
    let ws = Workspace::from_series(RunConfig::default(), stock, benchmark).unwrap();
    let dates = ws.valuation_dates();
    let first = ws.report(dates[0]);
    let last = ws.report(*dates.last().unwrap());
    assert!(!first.is_failure() && !last.is_failure(), "{first:?} {last:?}");
    assert!(ws.stock.closes()[ws.stock.len() - 1] < 0.5 * ws.option.strike);
    assert!(first.contributions[1].abs() > 1e-3, "{first:?}");
    assert!(last.contributions[1].abs() <= 1e-9 * last.contributions[0].abs(), "{last:?}");
}

#[test]
fn layer_report_is_flagged_unverified() {
    let panel = simulate_gaussian_panel(&[0.0, 0.0], &[vec![1.0, 0.2], vec![0.2, 1.0]], 20_000, 9).unwrap();
    let op = PortfolioOperator::new(
        OperatorKind::ReinsuranceLayer {
            deductible: 1.0,
            limit: 2.0,
        },
        2,
    )
    .unwrap();
    let model = EmpiricalModel::new(&op, &panel).unwrap();
    let r = RiskReport::compute(&model, &comp(&[1.0, 1.0]), &LambdaFunction::constant(0.05).unwrap(), 0.05, None).unwrap();
    assert!(r.flags.claim_unverified);
    assert!(r.flags.render().contains("claim_unverified"));
    assert!(r.euler_residual.is_finite());
}

#[test]
fn timeseries_output_is_byte_identical_across_runs() {
    let config = RunConfig {
        operator: OperatorChoice::MeanAdj,
        ..RunConfig::default()
    };
    let ws = Workspace::load(config).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_timeseries(&ws, a.path()).unwrap();
    run_timeseries(&ws, b.path()).unwrap();
    for name in ["timeseries.csv", "timeseries.json", "lambda_params.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
    let csv = std::fs::read_to_string(a.path().join("timeseries.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.ends_with("x_a,x_b,alpha,beta"), "{header}");
    // every row carries the calibrated parameters
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[fields.len() - 4..].iter().all(|f| f.parse::<f64>().is_ok()), "{line}");
    }
    assert_eq!(csv.lines().count(), 500);
}
