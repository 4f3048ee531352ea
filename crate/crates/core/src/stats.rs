//! Goodness-of-fit statistics for the simulation checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Critical value coefficient of the KS test at α ≈ 0.01.
pub const KS_COEFFICIENT: f64 = 1.63;
/// Bins with a smaller expected count are pooled before a χ² test.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    /// `1.63 / sqrt(n)`.
    pub critical: f64,
    /// Asymptotic Kolmogorov p-value.
    pub p_value: f64,
    pub passed: bool,
}

/// One-sample Kolmogorov-Smirnov test of `samples` against `cdf`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> Result<f64>) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test needs samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let critical = KS_COEFFICIENT / nf.sqrt();
    Ok(KsResult {
        n,
        statistic: d,
        critical,
        p_value: kolmogorov_p_value(n, d),
        passed: d < critical,
    })
}

/// `P[D_n > d]` from the Kolmogorov limit law with the usual small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn kolmogorov_p_value(n: usize, d: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub total: u64,
    /// Bins after pooling.
    pub bins: usize,
    pub dof: usize,
    pub statistic: f64,
    pub p_value: f64,
}

impl ChiSquareResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Pearson χ² test of `observed` counts against probabilities `expected`.
///
/// Bins with expected count below 5 are pooled together, and the pool is
/// merged into the smallest remaining bin if it is still too small. A
/// count in a bin of zero probability gives an infinite statistic.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            found: observed.len(),
        });
    }
    let total: u64 = observed.iter().sum();
    let psum: f64 = expected.iter().sum();
    if total == 0 || !(psum > 0.0) {
        return Err(Error::InvalidArgument("χ² test needs data and mass".into()));
    }
    let nf = total as f64;
    let mut impossible = false;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        let e = nf * p.max(0.0) / psum;
        if e <= 0.0 {
            impossible |= o > 0;
            continue;
        }
        if e < MIN_EXPECTED {
            pool.0 += o as f64;
            pool.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pool.1 > 0.0 {
        if pool.1 >= MIN_EXPECTED || bins.is_empty() {
            bins.push(pool);
        } else {
            let smallest = bins
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty");
            smallest.0 += pool.0;
            smallest.1 += pool.1;
        }
    }
    let statistic = if impossible {
        f64::INFINITY
    } else {
        bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum()
    };
    let dof = bins.len().saturating_sub(1);
    let p_value = if impossible {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sf(statistic)
    };
    Ok(ChiSquareResult {
        total,
        bins: bins.len(),
        dof,
        statistic,
        p_value,
    })
}

/// Sample mean and unbiased variance, with the standard errors of both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
}

pub fn moment_summary(samples: &[f64]) -> Result<MomentSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let c = (x - mean) * (x - mean);
        m2 += c;
        m4 += c * c;
    }
    let variance = m2 / (nf - 1.0);
    let m2n = m2 / nf;
    let m4n = m4 / nf;
    Ok(MomentSummary {
        n,
        mean,
        variance,
        mean_se: (variance / nf).sqrt(),
        variance_se: ((m4n - m2n * m2n).max(0.0) / nf).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_uniform_grid_is_tiny() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let r = ks_test(&xs, |x| Ok(x.clamp(0.0, 1.0))).unwrap();
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-12);
        assert!(r.passed);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn ks_detects_shift() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0 * 0.8).collect();
        let r = ks_test(&xs, |x| Ok(x.clamp(0.0, 1.0))).unwrap();
        assert!(!r.passed);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q_KS(1.63) ≈ 0.0098, Q_KS(1.36) ≈ 0.049 for large n
        let n = 1_000_000;
        let scale = (n as f64).sqrt();
        assert!((kolmogorov_p_value(n, 1.63 / scale) - 0.00977).abs() < 2e-4);
        assert!((kolmogorov_p_value(n, 1.36 / scale) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn chi_square_exact_fit_and_pooling() {
        let r = chi_square_test(&[50, 30, 20], &[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let r = chi_square_test(&[960, 30, 4, 3, 3], &[0.96, 0.03, 0.004, 0.003, 0.003]).unwrap();
        assert_eq!(r.bins, 3);
        let r = chi_square_test(&[97, 2, 1], &[0.97, 0.02, 0.01]).unwrap();
        assert_eq!(r.bins, 1);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_test(&[99, 1], &[1.0, 0.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn chi_square_p_value_matches_table() {
        // 1 dof, statistic 6.635 sits at the 1% point
        let r = chi_square_test(&[100 + 26, 100 - 26], &[0.5, 0.5]).unwrap();
        assert!((r.statistic - 13.52).abs() < 1e-12);
        assert!(r.p_value < 0.001);
        let sf = ChiSquared::new(1.0).unwrap().sf(6.635);
        assert!((sf - 0.01).abs() < 1e-4);
    }

    #[test]
    fn moments() {
        let m = moment_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
    }
}
