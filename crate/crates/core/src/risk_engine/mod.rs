//! Lambda quantiles and their sensitivities: density adjustment, risk
//! contributions, homogeneity degree, Euler decomposition and generalised
//! Euler allocations.

mod model;
mod quantile;
mod report;

pub use model::{EmpiricalLaw, EmpiricalModel, GaussianLaw, GaussianModel, PortfolioLaw, RiskModel};
pub use quantile::{
    kde_lambda_quantile, lambda_crossing, lambda_quantile, value_at_risk, Cdf, Crossing, KINK_PROXIMITY, ROOT_TOL,
    SCAN_CELLS,
};
pub use report::{Flags, RiskReport};

use crate::error::{Error, Result};
use crate::lambda_fn::LambdaFunction;
use crate::market_data::ScenarioPanel;
use crate::portfolio_ops::{Composition, OperatorKind, PortfolioOperator};

/// Relative floor on f − Λ′ below which η is reported as +∞.
pub const ETA_FLOOR: f64 = 1e-12;

/// η = f / (f − Λ′), with +∞ when the denominator vanishes.
pub fn density_adjustment(f: f64, dlambda: f64) -> Result<f64> {
    if !(f.is_finite() && dlambda.is_finite()) {
        return Err(Error::Numeric(format!("non-finite density adjustment input ({f}, {dlambda})")));
    }
    if f < 0.0 {
        return Err(Error::AssumptionViolation(format!("negative density {f}")));
    }
    if dlambda == 0.0 {
        return Ok(1.0);
    }
    let denom = f - dlambda;
    if denom < 0.0 && denom.abs() > ETA_FLOOR * f.max(1.0) {
        return Err(Error::AssumptionViolation(format!(
            "lambda slope {dlambda} exceeds the portfolio density {f}"
        )));
    }
    if denom <= ETA_FLOOR * f.max(1.0) {
        return Ok(f64::INFINITY);
    }
    Ok(f / denom)
}

/// Everything derived from one solve of the crossing at composition u.
#[derive(Debug, Clone)]
pub struct Evaluation<L> {
    pub law: L,
    pub crossing: Crossing,
    /// f_Y(−ρ)
    pub density: f64,
    /// Λ′(−ρ)
    pub slope: f64,
    pub eta: f64,
    pub tau: f64,
}

impl<L: PortfolioLaw> Evaluation<L> {
    pub fn rho(&self) -> f64 {
        self.crossing.rho
    }

    pub fn gamma(&self) -> f64 {
        self.tau * self.eta
    }

    /// −η E[∂g/∂u_i | Y = −ρ]
    pub fn contributions(&self) -> Result<Vec<f64>> {
        let cond = self.law.conditional_partials(self.crossing.point)?;
        Ok(cond.into_iter().map(|e| -self.eta * e).collect())
    }
}

/// Solves for ρ_Λ(u) and the density adjustment at the crossing.
pub fn evaluate<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction) -> Result<Evaluation<M::Law>> {
    let law = model.law(u)?;
    let crossing = lambda_crossing(&law, lambda, law.bracket())?;
    let density = law.pdf(crossing.point);
    let slope = lambda.deriv(crossing.point);
    let eta = density_adjustment(density, slope)?;
    Ok(Evaluation {
        law,
        crossing,
        density,
        slope,
        eta,
        tau: model.homogeneity().degree,
    })
}

/// ρ_Λ(u) alone.
pub fn rho_at<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction) -> Result<f64> {
    let law = model.law(u)?;
    lambda_quantile(&law, lambda, law.bracket())
}

/// ∂ρ_Λ/∂u_i for every asset.
pub fn risk_contributions<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction) -> Result<Vec<f64>> {
    evaluate(model, u, lambda)?.contributions()
}

/// γ = τ η at the crossing; +∞ when η is.
pub fn gamma_degree<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction) -> Result<f64> {
    Ok(evaluate(model, u, lambda)?.gamma())
}

/// τ η ρ − Σ u_i ∂ρ/∂u_i
pub fn euler_residual<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction) -> Result<f64> {
    let ev = evaluate(model, u, lambda)?;
    Ok(residual_of(ev.gamma(), ev.rho(), u, &ev.contributions()?))
}

/// γρ − Σ u_i c_i from already computed parts.
pub fn residual_of(gamma: f64, rho: f64, u: &Composition, contributions: &[f64]) -> f64 {
    let weighted: f64 = u.units().iter().zip(contributions).map(|(u, c)| u * c).sum();
    gamma * rho - weighted
}

/// Generalised Euler contributions at the all-ones composition.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerAllocation {
    pub psi: Vec<f64>,
    pub total: f64,
    /// ρ_Λ(1)
    pub rho: f64,
    /// Σψ − ρ_Λ(1)
    pub gap: f64,
}

/// ψ_i = −(1/τ) E[∂g/∂u_i(1) | g(1) = −ρ_Λ(1)].
pub fn generalised_euler<M: RiskModel>(model: &M, lambda: &LambdaFunction) -> Result<EulerAllocation> {
    let tau = model.homogeneity().degree;
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::Validation(format!("homogeneity degree {tau} cannot normalise the allocation")));
    }
    let ones = Composition::ones(model.n_assets());
    let law = model.law(&ones)?;
    let crossing = lambda_crossing(&law, lambda, law.bracket())?;
    let psi: Vec<f64> = law
        .conditional_partials(crossing.point)?
        .into_iter()
        .map(|e| -e / tau)
        .collect();
    let total: f64 = psi.iter().sum();
    Ok(EulerAllocation {
        gap: total - crossing.rho,
        total,
        rho: crossing.rho,
        psi,
    })
}

/// Allocation properties that hold for linear portfolios only.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAllocationCheck {
    pub psi: Vec<f64>,
    /// Assets whose scenario P&L is constant.
    pub riskless_assets: usize,
    /// max |ψ_i + c_i| over riskless assets with constant P&L c_i.
    pub riskless_gap: f64,
    /// Ordered pairs (i, j) with X_i ≤ X_j in every scenario.
    pub dominated_pairs: usize,
    /// Dominated pairs where ψ_i < ψ_j beyond rounding.
    pub monotonicity_violations: usize,
}

/// Checks that a riskless asset is allocated minus its constant P&L and that
/// an asset dominated scenario by scenario never receives less capital.
///
/// Neither property holds for general operators, so anything other than a
/// linear operator is rejected.
pub fn linear_allocation_check(
    op: &PortfolioOperator,
    panel: &ScenarioPanel,
    lambda: &LambdaFunction,
) -> Result<LinearAllocationCheck> {
    if *op.kind() != OperatorKind::Linear {
        return Err(Error::Validation(format!(
            "allocation monotonicity and risklessness are only defined for linear operators, got {}",
            op.kind().name()
        )));
    }
    let psi = generalised_euler(&EmpiricalModel::new(op, panel)?, lambda)?.psi;
    let columns: Vec<Vec<f64>> = (0..panel.n_assets()).map(|j| panel.column(j)).collect();
    let scale = psi.iter().fold(1.0f64, |m, p| m.max(p.abs()));
    let slack = 1e-12 * scale;

    let mut riskless_assets = 0;
    let mut riskless_gap: f64 = 0.0;
    for (col, p) in columns.iter().zip(&psi) {
        if col.iter().all(|&x| x == col[0]) {
            riskless_assets += 1;
            riskless_gap = riskless_gap.max((p + col[0]).abs());
        }
    }
    let mut dominated_pairs = 0;
    let mut monotonicity_violations = 0;
    for i in 0..columns.len() {
        for j in 0..columns.len() {
            if i != j && columns[i].iter().zip(&columns[j]).all(|(a, b)| a <= b) {
                dominated_pairs += 1;
                monotonicity_violations += (psi[i] < psi[j] - slack) as usize;
            }
        }
    }
    Ok(LinearAllocationCheck {
        psi,
        riskless_assets,
        riskless_gap,
        dominated_pairs,
        monotonicity_violations,
    })
}

/// Central differences (ρ(u + h e_i) − ρ(u − h e_i)) / 2h with h = step·max(1, |u_i|).
pub fn fd_gradient<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {step}")));
    }
    (0..u.len())
        .map(|i| {
            let h = step * u.units()[i].abs().max(1.0);
            let up = rho_at(model, &u.bumped(i, h), lambda)?;
            let down = rho_at(model, &u.bumped(i, -h), lambda)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// d/dt ρ_Λ(t u) at t = 1 by central differences over t = 1 ± dt.
pub fn scaling_slope<M: RiskModel>(model: &M, u: &Composition, lambda: &LambdaFunction, dt: f64) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0 && dt < 1.0) {
        return Err(Error::Validation(format!("scaling step {dt} outside (0, 1)")));
    }
    let up = rho_at(model, &u.scaled(1.0 + dt), lambda)?;
    let down = rho_at(model, &u.scaled(1.0 - dt), lambda)?;
    Ok((up - down) / (2.0 * dt))
}

/// Both sides of ρ_Λ(u; 𝔞 + 𝔟) = ρ_Γ(u; 𝔞) − 𝔟 with Γ(z) = Λ(z + 𝔟).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationCheck {
    pub rho_full: f64,
    pub rho_shifted: f64,
    pub shift: f64,
    /// ρ_Λ(u; g) − (ρ_Γ(u; 𝔞) − 𝔟)
    pub gap: f64,
}

/// Evaluates the translation identity on the KDE of each side.
pub fn translation_identity_check(
    op: &PortfolioOperator,
    u: &Composition,
    panel: &ScenarioPanel,
    lambda: &LambdaFunction,
) -> Result<TranslationCheck> {
    let (stochastic, shift) = op.split_additive(u, panel)?;
    let full: Vec<f64> = stochastic.iter().map(|a| a + shift).collect();
    let (lhs, _) = kde_lambda_quantile(&full, lambda)?;
    let (rhs, _) = kde_lambda_quantile(&stochastic, &lambda.shifted(shift))?;
    let rho_full = lhs.rho;
    let rho_shifted = rhs.rho;
    Ok(TranslationCheck {
        rho_full,
        rho_shifted,
        shift,
        gap: rho_full - (rho_shifted - shift),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::simulate_gaussian_panel;

    fn comp(u: &[f64]) -> Composition {
        Composition::new(u.to_vec()).unwrap()
    }

    #[test]
    fn density_adjustment_cases() {
        assert_eq!(density_adjustment(0.3, 0.0).unwrap(), 1.0);
        assert_eq!(density_adjustment(0.4, 0.2).unwrap(), 2.0);
        assert_eq!(density_adjustment(0.2, 0.2).unwrap(), f64::INFINITY);
        assert!(matches!(density_adjustment(0.1, 0.2), Err(Error::AssumptionViolation(_))));
        assert!(matches!(density_adjustment(-0.1, 0.0), Err(Error::AssumptionViolation(_))));
    }

    /// Closed-form Euler-VaR contributions for u·X, X ~ N(μ, Σ).
    fn gaussian_var_contributions(mu: &[f64], cov: &[Vec<f64>], u: &[f64], z_lambda: f64) -> Vec<f64> {
        let cu: Vec<f64> = cov.iter().map(|r| r.iter().zip(u).map(|(c, u)| c * u).sum()).collect();
        let sd = u.iter().zip(&cu).map(|(u, c)| u * c).sum::<f64>().sqrt();
        mu.iter().zip(&cu).map(|(m, c)| -m - c * z_lambda / sd).collect()
    }

    #[test]
    fn analytic_gaussian_contributions() {
        let mu = vec![0.1, -0.2];
        let cov = vec![vec![1.0, 0.4], vec![0.4, 2.0]];
        let model = GaussianModel::linear(mu.clone(), cov.clone()).unwrap();
        let l = LambdaFunction::constant(0.05).unwrap();
        let u = comp(&[1.0, 2.0]);
        let ev = evaluate(&model, &u, &l).unwrap();
        assert_eq!(ev.eta, 1.0);
        assert_eq!(ev.gamma(), 1.0);
        let c = ev.contributions().unwrap();
        let oracle = gaussian_var_contributions(&mu, &cov, u.units(), -1.644_853_626_951_472_9);
        for (a, b) in c.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(euler_residual(&model, &u, &l).unwrap().abs() < 1e-9);
        let fd = fd_gradient(&model, &u, &l, 1e-4).unwrap();
        for (a, b) in fd.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn one_asset_full_allocation() {
        let model = GaussianModel::linear(vec![0.3], vec![vec![2.0]]).unwrap();
        let l = LambdaFunction::piecewise_exp(-4.0, -1.0, 0.004, 0.01).unwrap();
        let alloc = generalised_euler(&model, &l).unwrap();
        assert!((alloc.psi[0] - alloc.rho).abs() < 1e-12);
    }

    #[test]
    fn zero_step_is_rejected() {
        let model = GaussianModel::linear(vec![0.0], vec![vec![1.0]]).unwrap();
        let l = LambdaFunction::constant(0.05).unwrap();
        assert!(matches!(fd_gradient(&model, &comp(&[1.0]), &l, 0.0), Err(Error::Validation(_))));
    }

    #[test]
    fn translation_zero_shift_is_exact() {
        let panel = simulate_gaussian_panel(&[0.0, 0.0], &[vec![1.0, 0.2], vec![0.2, 1.0]], 2000, 5).unwrap();
        let op = PortfolioOperator::linear(2);
        let l = LambdaFunction::piecewise_exp(-4.0, -2.0, 0.004, 0.01).unwrap();
        let check = translation_identity_check(&op, &comp(&[1.0, 1.0]), &panel, &l).unwrap();
        assert_eq!(check.shift, 0.0);
        assert_eq!(check.gap, 0.0);
    }

    #[test]
    fn translation_with_mean_adjustment() {
        let panel = simulate_gaussian_panel(&[0.3, 0.2], &[vec![1.0, 0.2], vec![0.2, 1.0]], 2000, 6).unwrap();
        let op = PortfolioOperator::new(OperatorKind::MeanAdjusted, 2).unwrap();
        let u = comp(&[1.0, 1.0]);
        let c = translation_identity_check(&op, &u, &panel, &LambdaFunction::constant(0.05).unwrap()).unwrap();
        assert!(c.shift != 0.0);
        assert!(c.gap.abs() <= 1e-10, "{c:?}");
        let e = LambdaFunction::piecewise_exp(-4.0, -2.0, 0.004, 0.01).unwrap();
        let c = translation_identity_check(&op, &u, &panel, &e).unwrap();
        assert!(c.gap.abs() <= 1e-11, "{c:?}");
    }

    #[test]
    fn unsupported_split_propagates() {
        let panel = simulate_gaussian_panel(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], 100, 1).unwrap();
        let op = PortfolioOperator::new(OperatorKind::PositivePart, 2).unwrap();
        let r = translation_identity_check(&op, &comp(&[1.0, 1.0]), &panel, &LambdaFunction::constant(0.05).unwrap());
        assert!(matches!(r, Err(Error::UnsupportedSplit(_))));
    }

    #[test]
    fn law_invariance_under_permutation() {
        let panel = simulate_gaussian_panel(&[0.0, 0.1], &[vec![1.0, 0.6], vec![0.6, 1.5]], 3000, 11).unwrap();
        let mut order: Vec<usize> = (0..3000).collect();
        order.reverse();
        order.swap(5, 1000);
        let shuffled = panel.permuted(&order).unwrap();
        let op = PortfolioOperator::linear(2);
        let l = LambdaFunction::piecewise_exp(-5.0, -2.5, 0.004, 0.01).unwrap();
        let u = comp(&[1.0, 1.0]);
        let a = evaluate(&EmpiricalModel::new(&op, &panel).unwrap(), &u, &l).unwrap();
        let b = evaluate(&EmpiricalModel::new(&op, &shuffled).unwrap(), &u, &l).unwrap();
        assert_eq!(a.rho().to_bits(), b.rho().to_bits());
        assert_eq!(a.eta.to_bits(), b.eta.to_bits());
        assert_eq!(a.gamma().to_bits(), b.gamma().to_bits());
    }

    #[test]
    fn linear_allocation_properties() {
        let base = simulate_gaussian_panel(&[0.0], &[vec![1.0]], 4000, 5).unwrap();
        let x = base.column(0);
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, v + 0.3 + 0.2 * v.abs(), 0.05]).collect();
        let panel = ScenarioPanel::new(None, vec!["a".into(), "b".into(), "cash".into()], rows).unwrap();
        let l = LambdaFunction::constant(0.05).unwrap();
        let c = linear_allocation_check(&PortfolioOperator::linear(3), &panel, &l).unwrap();
        assert_eq!(c.riskless_assets, 1);
        assert!(c.riskless_gap <= 1e-14, "{c:?}");
        // cash ≤ … is not dominated either way; only a ≤ b holds everywhere
        assert_eq!(c.dominated_pairs, 1);
        assert_eq!(c.monotonicity_violations, 0);
        assert!(c.psi[0] > c.psi[1]);

        let pospart = PortfolioOperator::new(OperatorKind::PositivePart, 3).unwrap();
        assert!(matches!(linear_allocation_check(&pospart, &panel, &l), Err(Error::Validation(_))));
    }
}
