//! Portfolio P&L laws: the empirical KDE/Nadaraya-Watson model built from a
//! scenario panel, and an analytic Gaussian model used as a reference path.

use std::cmp::Ordering;

use crate::density::{KdeModel, NwWeights};
use crate::error::{Error, Result};
use crate::market_data::ScenarioPanel;
use crate::normal;
use crate::portfolio_ops::{Composition, Homogeneity, PortfolioOperator};

use super::quantile::Cdf;

/// Distribution of Y = g(u, X) at one composition, together with the
/// conditional means E[∂g/∂u_i | Y = y] that drive risk contributions.
pub trait PortfolioLaw: Cdf {
    fn pdf(&self, y: f64) -> f64;

    /// Initial search interval for the crossing solver.
    fn bracket(&self) -> (f64, f64);

    fn conditional_partials(&self, y: f64) -> Result<Vec<f64>>;

    /// Scenarios whose partial derivatives were taken at an operator kink.
    fn kink_hits(&self) -> usize {
        0
    }
}

/// A family of portfolio laws indexed by the composition u.
pub trait RiskModel {
    type Law: PortfolioLaw;

    fn n_assets(&self) -> usize;

    /// Declared degree τ of the underlying operator.
    fn homogeneity(&self) -> Homogeneity;

    fn law(&self, u: &Composition) -> Result<Self::Law>;
}

/// Historical-simulation model: operator values on a scenario panel,
/// smoothed by a Silverman KDE.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalModel<'a> {
    op: &'a PortfolioOperator,
    panel: &'a ScenarioPanel,
}

impl<'a> EmpiricalModel<'a> {
    pub fn new(op: &'a PortfolioOperator, panel: &'a ScenarioPanel) -> Result<Self> {
        if op.n_assets() != panel.n_assets() {
            return Err(Error::Dimension {
                expected: op.n_assets(),
                got: panel.n_assets(),
            });
        }
        Ok(Self { op, panel })
    }

    pub fn operator(&self) -> &PortfolioOperator {
        self.op
    }

    pub fn panel(&self) -> &ScenarioPanel {
        self.panel
    }
}

#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    kde: KdeModel,
    /// Portfolio values in canonical order.
    values: Vec<f64>,
    /// ∂g/∂u_i columns aligned with `values`.
    partials: Vec<Vec<f64>>,
    kink_hits: usize,
}

impl EmpiricalLaw {
    pub fn kde(&self) -> &KdeModel {
        &self.kde
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Cdf for EmpiricalLaw {
    fn cdf(&self, y: f64) -> f64 {
        self.kde.cdf(y)
    }
}

impl PortfolioLaw for EmpiricalLaw {
    fn pdf(&self, y: f64) -> f64 {
        self.kde.pdf(y)
    }

    fn bracket(&self) -> (f64, f64) {
        self.kde.support()
    }

    fn conditional_partials(&self, y: f64) -> Result<Vec<f64>> {
        let weights = NwWeights::new(&self.values, y, self.kde.bandwidth())?;
        self.partials.iter().map(|col| weights.mean(col)).collect()
    }

    fn kink_hits(&self) -> usize {
        self.kink_hits
    }
}

impl RiskModel for EmpiricalModel<'_> {
    type Law = EmpiricalLaw;

    fn n_assets(&self) -> usize {
        self.op.n_assets()
    }

    fn homogeneity(&self) -> Homogeneity {
        self.op.homogeneity_degree()
    }

    fn law(&self, u: &Composition) -> Result<EmpiricalLaw> {
        let state = self.op.prepare(u, self.panel)?;
        let (columns, kink_hits) = state.partial_columns(self.panel);
        let values = state.values();

        // Sorting the (value, partials) pairs makes every downstream sum
        // independent of the scenario order.
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| {
            values[a].total_cmp(&values[b]).then_with(|| {
                columns
                    .iter()
                    .map(|c| c[a].total_cmp(&c[b]))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
        });
        let sorted_values: Vec<f64> = order.iter().map(|&k| values[k]).collect();
        let partials = columns.iter().map(|c| order.iter().map(|&k| c[k]).collect()).collect();
        Ok(EmpiricalLaw {
            kde: KdeModel::silverman(&sorted_values)?,
            values: sorted_values,
            partials,
            kink_hits,
        })
    }
}

/// Linear portfolio of jointly Gaussian asset P&L, X ~ N(μ, Σ).
///
/// With `centered` the operator is u·x − E[u·X], otherwise u·x. Every
/// quantity is available in closed form:
/// E[X_i | u·X = y] = μ_i + (Σu)_i (y − u·μ) / u'Σu.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    centered: bool,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>, centered: bool) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Validation("empty mean vector".into()));
        }
        if cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: cov.len(),
            });
        }
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite Gaussian parameters".into()));
        }
        Ok(Self { mean, cov, centered })
    }

    pub fn linear(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(mean, cov, false)
    }

    pub fn mean_adjusted(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(mean, cov, true)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    location: f64,
    sd: f64,
    mean: Vec<f64>,
    cov_u: Vec<f64>,
    centered: bool,
}

impl GaussianLaw {
    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    /// Σu
    pub fn cov_u(&self) -> &[f64] {
        &self.cov_u
    }
}

impl Cdf for GaussianLaw {
    fn cdf(&self, y: f64) -> f64 {
        normal::cdf((y - self.location) / self.sd)
    }
}

impl PortfolioLaw for GaussianLaw {
    fn pdf(&self, y: f64) -> f64 {
        normal::pdf((y - self.location) / self.sd) / self.sd
    }

    fn bracket(&self) -> (f64, f64) {
        (self.location - 12.0 * self.sd, self.location + 12.0 * self.sd)
    }

    fn conditional_partials(&self, y: f64) -> Result<Vec<f64>> {
        let var = self.sd * self.sd;
        let z = (y - self.location) / var;
        Ok(self
            .cov_u
            .iter()
            .zip(&self.mean)
            .map(|(c, m)| if self.centered { c * z } else { m + c * z })
            .collect())
    }
}

impl RiskModel for GaussianModel {
    type Law = GaussianLaw;

    fn n_assets(&self) -> usize {
        self.mean.len()
    }

    fn homogeneity(&self) -> Homogeneity {
        Homogeneity {
            degree: 1.0,
            claim_unverified: false,
        }
    }

    fn law(&self, u: &Composition) -> Result<GaussianLaw> {
        let units = u.units();
        if units.len() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: units.len(),
            });
        }
        let cov_u: Vec<f64> = self
            .cov
            .iter()
            .map(|row| row.iter().zip(units).map(|(c, u)| c * u).sum())
            .collect();
        let var: f64 = units.iter().zip(&cov_u).map(|(u, c)| u * c).sum();
        if !(var > 0.0) {
            return Err(Error::DegenerateSample(format!("portfolio variance {var} is not positive")));
        }
        let location = if self.centered {
            0.0
        } else {
            units.iter().zip(&self.mean).map(|(u, m)| u * m).sum()
        };
        Ok(GaussianLaw {
            location,
            sd: var.sqrt(),
            mean: self.mean.clone(),
            cov_u,
            centered: self.centered,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::simulate_gaussian_panel;
    use crate::portfolio_ops::OperatorKind;

    #[test]
    fn gaussian_law_moments() {
        let m = GaussianModel::linear(vec![1.0, -2.0], vec![vec![4.0, 1.0], vec![1.0, 9.0]]).unwrap();
        let law = m.law(&Composition::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(law.location(), -3.0);
        // u'Σu = 4 + 4 + 36 = 44
        assert!((law.sd() - 44f64.sqrt()).abs() < 1e-15);
        assert_eq!(law.cov_u(), &[6.0, 19.0]);
        assert!((law.cdf(-3.0) - 0.5).abs() < 1e-15);
        // conditional means recombine to y
        let e = law.conditional_partials(1.5).unwrap();
        assert!((e[0] + 2.0 * e[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn centered_law() {
        let m = GaussianModel::mean_adjusted(vec![1.0, -2.0], vec![vec![4.0, 1.0], vec![1.0, 9.0]]).unwrap();
        let law = m.law(&Composition::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(law.location(), 0.0);
        let e = law.conditional_partials(-2.0).unwrap();
        assert!((e[0] + 2.0 * e[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_gaussian() {
        let m = GaussianModel::linear(vec![0.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(m.law(&Composition::new(vec![1.0, -1.0]).unwrap()).is_err());
    }

    #[test]
    fn empirical_law_is_order_free() {
        let panel = simulate_gaussian_panel(&[0.0, 0.0], &[vec![1.0, 0.5], vec![0.5, 1.0]], 500, 3).unwrap();
        let op = PortfolioOperator::new(OperatorKind::MeanAdjusted, 2).unwrap();
        let u = Composition::new(vec![1.0, 3.0]).unwrap();
        let a = EmpiricalModel::new(&op, &panel).unwrap().law(&u).unwrap();
        let order: Vec<usize> = (0..500).rev().collect();
        let shuffled = panel.permuted(&order).unwrap();
        let b = EmpiricalModel::new(&op, &shuffled).unwrap().law(&u).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.conditional_partials(-1.0).unwrap(), b.conditional_partials(-1.0).unwrap());
    }
}
