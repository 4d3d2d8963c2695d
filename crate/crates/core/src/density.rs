//! Gaussian kernel density / distribution estimates of portfolio P&L and the
//! Nadaraya-Watson conditional-mean estimator.

use std::io::Write;

use crate::error::{Error, Result};
use crate::normal;

/// Kernel terms further than this many bandwidths from the evaluation point
/// are taken as exactly 0 (pdf) or 0/1 (cdf); Φ(−10) ≈ 7.6e-24.
const KERNEL_CUTOFF: f64 = 10.0;

/// Weight sums below this mean the conditioning point has no sample support.
const WEIGHT_FLOOR: f64 = 1e-300;

/// Sample standard deviation with the N − 1 denominator.
pub fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Silverman's rule of thumb, h = 1.06 σ N^{−1/5}.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 samples, got {}", samples.len())));
    }
    let sd = sample_std(samples);
    if !sd.is_finite() {
        return Err(Error::Numeric("non-finite sample standard deviation".into()));
    }
    if sd == 0.0 {
        return Err(Error::DegenerateSample("all samples are equal".into()));
    }
    Ok(1.06 * sd * (samples.len() as f64).powf(-0.2))
}

/// Gaussian KDE over a fixed sample.
///
/// Samples are stored sorted, so every estimate is independent of the order
/// in which scenarios were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(samples: &[f64], bandwidth: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateSample(format!("need at least 2 samples, got {}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite KDE sample".into()));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Validation(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            samples: sorted,
            bandwidth,
        })
    }

    /// KDE with the Silverman bandwidth of the samples.
    pub fn silverman(samples: &[f64]) -> Result<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let h = silverman_bandwidth(&sorted)?;
        Self::new(&sorted, h)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Samples in ascending order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// [min − 10h, max + 10h]; the CDF is ~0 and ~1 at the two ends.
    pub fn support(&self) -> (f64, f64) {
        let pad = KERNEL_CUTOFF * self.bandwidth;
        (self.samples[0] - pad, self.samples[self.samples.len() - 1] + pad)
    }

    fn window(&self, y: f64) -> (usize, usize) {
        let reach = KERNEL_CUTOFF * self.bandwidth;
        let lo = self.samples.partition_point(|&s| s < y - reach);
        let hi = self.samples.partition_point(|&s| s <= y + reach);
        (lo, hi)
    }

    /// f̂(y) = (1/(N h)) Σ φ((y − y_i)/h)
    pub fn pdf(&self, y: f64) -> f64 {
        let (lo, hi) = self.window(y);
        let h = self.bandwidth;
        let sum: f64 = self.samples[lo..hi].iter().map(|&s| normal::pdf((y - s) / h)).sum();
        sum / (self.samples.len() as f64 * h)
    }

    /// F̂(y) = (1/N) Σ Φ((y − y_i)/h)
    pub fn cdf(&self, y: f64) -> f64 {
        let (lo, hi) = self.window(y);
        let h = self.bandwidth;
        let mut acc = lo as f64;
        for &s in &self.samples[lo..hi] {
            acc += normal::cdf((y - s) / h);
        }
        acc / self.samples.len() as f64
    }

    /// Writes `y,pdf,cdf` on an evenly spaced grid of `points` values.
    pub fn write_grid_csv<W: Write>(&self, lo: f64, hi: f64, points: usize, writer: W) -> Result<()> {
        if points < 2 || !(lo < hi) {
            return Err(Error::Validation("grid needs lo < hi and at least 2 points".into()));
        }
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["y", "pdf", "cdf"])?;
        for k in 0..points {
            let y = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            wtr.write_record([format!("{y}"), format!("{}", self.pdf(y)), format!("{}", self.cdf(y))])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Gaussian kernel weights φ((y0 − y_i)/h) at one conditioning point, shared
/// across every regressor conditioned on the same sample.
#[derive(Debug, Clone)]
pub struct NwWeights {
    weights: Vec<f64>,
    total: f64,
}

impl NwWeights {
    pub fn new(conditioning: &[f64], y0: f64, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Validation(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if !y0.is_finite() {
            return Err(Error::Numeric(format!("non-finite conditioning point {y0}")));
        }
        let weights: Vec<f64> = conditioning.iter().map(|&y| normal::pdf((y0 - y) / bandwidth)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > WEIGHT_FLOOR) {
            return Err(Error::UnsupportedConditioningPoint { y0 });
        }
        Ok(Self { weights, total })
    }

    /// Σ x_i w_i / Σ w_i
    pub fn mean(&self, xs: &[f64]) -> Result<f64> {
        if xs.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: xs.len(),
            });
        }
        Ok(xs.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() / self.total)
    }
}

/// Nadaraya-Watson estimate of E[X | Y = y0] from paired samples.
pub fn nw_conditional_mean(xs: &[f64], ys: &[f64], y0: f64, bandwidth: f64) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: ys.len(),
            got: xs.len(),
        });
    }
    NwWeights::new(ys, y0, bandwidth)?.mean(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silverman_reference() {
        // ±1 alternating has sd √(N/(N−1)); rescale to exactly 1
        let n = 250;
        let scale = ((n - 1) as f64 / n as f64).sqrt();
        let s: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { scale } else { -scale }).collect();
        let h = silverman_bandwidth(&s).unwrap();
        assert!((h - 0.351_332_125_838_038_6).abs() < 1e-12);
    }

    #[test]
    fn silverman_degenerate_and_scaling() {
        assert!(matches!(silverman_bandwidth(&[2.0; 10]), Err(Error::DegenerateSample(_))));
        assert!(matches!(silverman_bandwidth(&[2.0]), Err(Error::DegenerateSample(_))));
        let s = [0.3, -1.2, 2.5, 0.7, -0.1];
        let scaled: Vec<f64> = s.iter().map(|v| 3.5 * v).collect();
        let (h, hs) = (silverman_bandwidth(&s).unwrap(), silverman_bandwidth(&scaled).unwrap());
        assert!((hs - 3.5 * h).abs() < 1e-14);
    }

    #[test]
    fn two_point_pdf() {
        let kde = KdeModel::new(&[-1.0, 1.0], 1.0).unwrap();
        assert!((kde.pdf(0.0) - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert!(kde.pdf(25.0) < 1e-20);
        for y in [0.3, 1.7, 4.0] {
            assert_eq!(kde.pdf(y), kde.pdf(-y));
        }
        assert!(KdeModel::new(&[1.0], 1.0).is_err());
    }

    #[test]
    fn cdf_limits_and_symmetry() {
        let kde = KdeModel::new(&[-2.0, 2.0], 0.5).unwrap();
        assert_eq!(kde.cdf(0.0), 0.5);
        assert!(kde.cdf(1e6) == 1.0);
        assert!(kde.cdf(-1e6) == 0.0);
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        let s = [-1.3, -0.2, 0.0, 0.4, 1.1, 2.6, 3.0];
        let kde = KdeModel::new(&s, 0.6).unwrap();
        for k in 0..50 {
            let y = -3.0 + 0.15 * k as f64;
            let h = 1e-5;
            let fd = (kde.cdf(y + h) - kde.cdf(y - h)) / (2.0 * h);
            assert!((fd - kde.pdf(y)).abs() < 1e-7, "at {y}");
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let s: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64 * 0.3 - 2.0).collect();
        let kde = KdeModel::silverman(&s).unwrap();
        let (lo, hi) = kde.support();
        // composite Simpson with a step well below the bandwidth
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        let mut acc = kde.pdf(lo) + kde.pdf(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * kde.pdf(lo + i as f64 * step);
        }
        assert!((acc * step / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nw_reference_cases() {
        let ys = [-1.0, 0.0, 1.0];
        assert_eq!(nw_conditional_mean(&[4.0; 3], &ys, 0.37, 0.8).unwrap(), 4.0);
        let mean = nw_conditional_mean(&[1.0, 2.0, 6.0], &[0.5; 3], 0.5, 1.0).unwrap();
        assert!((mean - 3.0).abs() < 1e-15);
        let (p0, p1) = (normal::pdf(0.0), normal::pdf(1.0));
        let expected = (1.0 * p1 + 2.0 * p0 + 3.0 * p1) / (2.0 * p1 + p0);
        let got = nw_conditional_mean(&[1.0, 2.0, 3.0], &ys, 0.0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn nw_rejects_unsupported_point() {
        let r = nw_conditional_mean(&[1.0, 2.0], &[0.0, 0.1], 1e3, 0.01);
        assert!(matches!(r, Err(Error::UnsupportedConditioningPoint { .. })));
    }

    #[test]
    fn nw_converges_on_bivariate_gaussian() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        // (X, Y) with corr 0.6, sd_X 2, sd_Y 1, means (1, 0): E[X | Y = y] = 1 + 1.2 y
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let y = z1;
            xs.push(1.0 + 2.0 * (0.6 * z1 + 0.8 * z2));
            ys.push(y);
        }
        let y0 = 0.0;
        let got = nw_conditional_mean(&xs, &ys, y0, 0.05).unwrap();
        assert!((got - 1.0).abs() < 0.05, "{got}");
    }

    proptest! {
        #[test]
        fn cdf_monotone_on_grid(samples in prop::collection::vec(-50.0f64..50.0, 2..60), h in 0.01f64..5.0) {
            let kde = KdeModel::new(&samples, h).unwrap();
            let (lo, hi) = kde.support();
            let mut prev = 0.0;
            for k in 0..=2000 {
                let v = kde.cdf(lo + (hi - lo) * k as f64 / 2000.0);
                prop_assert!(v >= prev);
                prev = v;
            }
        }

        #[test]
        fn nw_is_a_convex_combination(pairs in prop::collection::vec((-10.0f64..10.0, -3.0f64..3.0), 2..50),
                                      y0 in -3.0f64..3.0, h in 0.1f64..2.0) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = nw_conditional_mean(&xs, &ys, y0, h).unwrap();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}
