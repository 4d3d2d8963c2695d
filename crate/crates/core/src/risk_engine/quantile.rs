//! Smallest-crossing solver for lambda quantiles.

use crate::density::KdeModel;
use crate::error::{Error, Result};
use crate::lambda_fn::LambdaFunction;

/// Coarse cells scanned left to right before bisection.
pub const SCAN_CELLS: usize = 1024;
/// Bisection stops once the bracket width falls below this, relative to max(1, |y|).
pub const ROOT_TOL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 60;
/// Distance to a knot of Λ′ below which the crossing is flagged.
pub const KINK_PROXIMITY: f64 = 1e-9;

/// A continuous, non-decreasing distribution function.
pub trait Cdf {
    fn cdf(&self, y: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, y: f64) -> f64 {
        self(y)
    }
}

impl Cdf for KdeModel {
    fn cdf(&self, y: f64) -> f64 {
        KdeModel::cdf(self, y)
    }
}

/// Location of the smallest crossing y* of F and Λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// y*, on the P&L axis.
    pub point: f64,
    /// ρ_Λ = −y*
    pub rho: f64,
    /// y* lies within 1e-9 of a point where Λ′ jumps.
    pub near_kink: bool,
}

/// Finds y* = inf{y : F(y) > Λ(y)} inside `bracket`, expanding it first if
/// needed so that F < Λ at the left end and F > Λ at the right end.
pub fn lambda_crossing<C: Cdf + ?Sized>(cdf: &C, lambda: &LambdaFunction, bracket: (f64, f64)) -> Result<Crossing> {
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Validation(format!("invalid bracket [{lo}, {hi}]")));
    }
    let excess = |y: f64| -> Result<f64> {
        let v = cdf.cdf(y) - lambda.eval(y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("non-finite CDF value at {y}")))
        }
    };

    let mut width = hi - lo;
    let mut doublings = 0;
    while excess(lo)? >= 0.0 {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::NoIntersection { lo, hi });
        }
        lo -= width;
        width *= 2.0;
        doublings += 1;
    }
    let mut width = hi - lo;
    let mut doublings = 0;
    while excess(hi)? <= 0.0 {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::NoIntersection { lo, hi });
        }
        hi += width;
        width *= 2.0;
        doublings += 1;
    }

    // leftmost cell whose right edge has F > Λ
    let step = (hi - lo) / SCAN_CELLS as f64;
    let mut left = lo;
    let mut right = hi;
    for k in 1..=SCAN_CELLS {
        let y = if k == SCAN_CELLS { hi } else { lo + k as f64 * step };
        if excess(y)? > 0.0 {
            right = y;
            break;
        }
        left = y;
    }

    // invariant: excess(left) ≤ 0 < excess(right)
    loop {
        let mid = 0.5 * (left + right);
        if right - left <= ROOT_TOL * mid.abs().max(1.0) || mid <= left || mid >= right {
            break;
        }
        let v = excess(mid)?;
        if v > 0.0 {
            right = mid;
        } else {
            left = mid;
        }
    }
    let point = 0.5 * (left + right);
    let near_kink = lambda.kinks().iter().any(|k| (k - point).abs() <= KINK_PROXIMITY);
    Ok(Crossing {
        point,
        rho: -point,
        near_kink,
    })
}

/// ρ_Λ = −inf{y : F(y) > Λ(y)}.
pub fn lambda_quantile<C: Cdf + ?Sized>(cdf: &C, lambda: &LambdaFunction, bracket: (f64, f64)) -> Result<f64> {
    lambda_crossing(cdf, lambda, bracket).map(|c| c.rho)
}

/// VaR_λ: the lambda quantile of a constant lambda function.
pub fn value_at_risk<C: Cdf + ?Sized>(cdf: &C, level: f64, bracket: (f64, f64)) -> Result<f64> {
    lambda_quantile(cdf, &LambdaFunction::constant(level)?, bracket)
}

/// Lambda quantile of a sample through its Silverman-bandwidth KDE.
pub fn kde_lambda_quantile(samples: &[f64], lambda: &LambdaFunction) -> Result<(Crossing, KdeModel)> {
    let kde = KdeModel::silverman(samples)?;
    let crossing = lambda_crossing(&kde, lambda, kde.support())?;
    Ok((crossing, kde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    fn uniform(a: f64, b: f64) -> impl Fn(f64) -> f64 {
        move |y: f64| ((y - a) / (b - a)).clamp(0.0, 1.0)
    }

    #[test]
    fn median_of_symmetric_uniform() {
        let l = LambdaFunction::constant(0.5).unwrap();
        let rho = lambda_quantile(&uniform(-1.0, 1.0), &l, (-1.0, 1.0)).unwrap();
        assert!(rho.abs() < 1e-12);
    }

    #[test]
    fn normal_var() {
        let rho = value_at_risk(&normal::cdf, 0.05, (-1.0, 1.0)).unwrap();
        assert!((rho - 1.644_853_626_951_472_9).abs() < 1e-10);
    }

    #[test]
    fn uniform_surplus_is_negative() {
        let rho = value_at_risk(&uniform(0.0, 1.0), 0.1, (0.0, 1.0)).unwrap();
        assert!((rho + 0.1).abs() < 1e-12);
    }

    #[test]
    fn var_is_the_constant_lambda_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let level = rng.random_range(0.001..0.5);
            let mu = rng.random_range(-3.0..3.0);
            let sd = rng.random_range(0.1..5.0);
            let f = move |y: f64| normal::cdf((y - mu) / sd);
            let a = value_at_risk(&f, level, (-1.0, 1.0)).unwrap();
            let b = lambda_quantile(&f, &LambdaFunction::constant(level).unwrap(), (-1.0, 1.0)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bracket_expands() {
        let f = |y: f64| normal::cdf((y - 500.0) / 10.0);
        let rho = value_at_risk(&f, 0.5, (-1.0, 1.0)).unwrap();
        assert!((rho + 500.0).abs() < 1e-9);
    }

    #[test]
    fn no_intersection() {
        // F never rises above 0.9 on the real line
        let f = |y: f64| 0.8 * normal::cdf(y);
        let r = value_at_risk(&f, 0.9, (-1.0, 1.0));
        assert!(matches!(r, Err(Error::NoIntersection { .. })));
    }

    #[test]
    fn non_finite_cdf_is_a_numeric_error() {
        let f = |y: f64| if y > 0.0 { f64::NAN } else { 0.0 };
        let r = value_at_risk(&f, 0.5, (-1.0, 1.0));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn exp_lambda_against_brute_force_infimum() {
        let l = LambdaFunction::piecewise_exp(-3.0, -2.0, 0.004004, 0.01).unwrap();
        let f = |y: f64| normal::cdf(y / 1.1);
        let rho = lambda_quantile(&f, &l, (-8.0, 8.0)).unwrap();
        // first of 10^7 grid points on [-8, 8] where F > Λ
        let n = 10_000_000usize;
        let step = 16.0 / n as f64;
        let k = (0..=n).find(|&k| {
            let y = -8.0 + k as f64 * step;
            f(y) > l.eval(y)
        });
        let y = -8.0 + k.unwrap() as f64 * step - 0.5 * step;
        assert!((-rho - y).abs() < 1e-6);
    }

    #[test]
    fn kink_proximity_flag() {
        // Λ′ jumps at 0 and F crosses exactly there
        let l = LambdaFunction::piecewise_linear(vec![(0.0, 0.5), (1.0, 0.7)]).unwrap();
        let c = lambda_crossing(&normal::cdf, &l, (-3.0, 3.0)).unwrap();
        assert!(c.point.abs() < 1e-9);
        assert!(c.near_kink);
    }
}
