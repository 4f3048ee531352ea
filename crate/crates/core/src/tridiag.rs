//! Tridiagonal eigenvalue and linear-solve kernels.
//!
//! [`TransientBlock`] holds the restriction of a stopped birth-and-death
//! generator to its transient states, parametrised by the jump rates rather
//! than by matrix entries. Pivots of `-A - σI` are then formed through the
//! differential recurrence
//!
//! ```text
//! δ_0 = -σ,   p_i = up_i + δ_i,   δ_{i+1} = down_{i+1} δ_i / p_i - σ
//! ```
//!
//! which never subtracts the large diagonal from the off-diagonal flow. For
//! shifts below the smallest eigenvalue every pivot is positive and every
//! operation in the solves adds positive terms, so solutions are accurate
//! entrywise even when the chain is very stiff.

use crate::error::{Error, Result};

const MAX_BISECTION_STEPS: usize = 400;

/// Transient block of a stopped chain on `0..n` with exit from `n-1`.
///
/// `up[i]` is the rate `i -> i+1` (for `i = n-1` this is the exit rate),
/// `down[i]` the rate `i -> i-1`; `down[0]` is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientBlock {
    up: Vec<f64>,
    down: Vec<f64>,
}

impl TransientBlock {
    pub fn new(up: Vec<f64>, mut down: Vec<f64>) -> Result<Self> {
        if up.is_empty() || up.len() != down.len() {
            return Err(Error::DimensionMismatch {
                expected: up.len().max(1),
                found: down.len(),
            });
        }
        down[0] = 0.0;
        for (i, &u) in up.iter().enumerate() {
            if !(u.is_finite() && u > 0.0) {
                return Err(Error::Positivity {
                    context: "transient block".into(),
                    quantity: "up",
                    index: i,
                    value: u,
                });
            }
        }
        for (i, &d) in down.iter().enumerate().skip(1) {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Positivity {
                    context: "transient block".into(),
                    quantity: "down",
                    index: i,
                    value: d,
                });
            }
        }
        Ok(TransientBlock { up, down })
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    pub fn up(&self) -> &[f64] {
        &self.up
    }

    pub fn down(&self) -> &[f64] {
        &self.down
    }

    /// Number of eigenvalues of `-A` strictly below `sigma`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let mut count = 0;
        let mut delta = -sigma;
        for i in 0..self.len() {
            let mut p = self.up[i] + delta;
            if p == 0.0 {
                p = -f64::MIN_POSITIVE;
            }
            if p < 0.0 {
                count += 1;
            }
            if i + 1 < self.len() {
                delta = self.down[i + 1] * delta / p - sigma;
            }
        }
        count
    }

    /// Gershgorin upper bound on the spectrum of `-A`.
    fn upper_bound(&self) -> f64 {
        (0..self.len())
            .map(|i| 2.0 * (self.up[i] + self.down[i]))
            .fold(0.0, f64::max)
    }

    /// `k`-th smallest eigenvalue (0-based) of `-A`, by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = self.upper_bound() * (1.0 + 4.0 * f64::EPSILON);
        bisect(&mut lo, &mut hi, |s| self.count_below(s) > k);
        0.5 * (lo + hi)
    }

    /// All eigenvalues of `-A`, increasing.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.eigenvalue(k)).collect()
    }

    fn pivots(&self, sigma: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let mut pivots = Vec::with_capacity(n);
        let mut delta = -sigma;
        for i in 0..n {
            let p = self.up[i] + delta;
            if !(p > 0.0) {
                return Err(Error::Positivity {
                    context: format!("shifted factorisation at σ = {sigma:e}"),
                    quantity: "pivot",
                    index: i,
                    value: p,
                });
            }
            pivots.push(p);
            if i + 1 < n {
                delta = self.down[i + 1] * delta / p - sigma;
            }
        }
        Ok(pivots)
    }

    /// Factorises `-A - σI`; fails unless `σ` lies below the spectrum.
    pub fn factor(&self, sigma: f64) -> Result<ShiftedFactor<'_>> {
        Ok(ShiftedFactor {
            block: self,
            pivots: self.pivots(sigma)?,
        })
    }
}

/// `LU` factors of `-A - σI` for a shift below the spectrum.
#[derive(Debug)]
pub struct ShiftedFactor<'a> {
    block: &'a TransientBlock,
    pivots: Vec<f64>,
}

impl ShiftedFactor<'_> {
    /// Solves `(-A - σI) y = r`.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let (up, down, p) = (&self.block.up, &self.block.down, &self.pivots);
        let mut z = vec![0.0; n];
        z[0] = r[0];
        for i in 1..n {
            z[i] = r[i] + down[i] * z[i - 1] / p[i - 1];
        }
        let mut y = vec![0.0; n];
        y[n - 1] = z[n - 1] / p[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (z[i] + up[i] * y[i + 1]) / p[i];
        }
        y
    }

    /// Solves `(-A - σI)^T y = r`.
    pub fn solve_transpose(&self, r: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let (up, down, p) = (&self.block.up, &self.block.down, &self.pivots);
        let mut w = vec![0.0; n];
        w[0] = r[0] / p[0];
        for i in 1..n {
            w[i] = (r[i] + up[i - 1] * w[i - 1]) / p[i];
        }
        let mut y = vec![0.0; n];
        y[n - 1] = w[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = w[i] + down[i + 1] * y[i + 1] / p[i];
        }
        y
    }
}

/// Singular values, increasing, of an `n x n` lower bidiagonal matrix `B`.
///
/// `off_sq` holds the squared entries of `B` in the order
/// `B(0,0), B(1,0), B(1,1), B(2,1), ...` (length `2n - 1`), which is the
/// off-diagonal of the zero-diagonal Golub-Kahan form `[[0, B], [Bᵀ, 0]]`
/// after an odd-even permutation.
///
/// Sturm counts on the zero-diagonal form only ever divide squared entries
/// by previous pivots, so small singular values keep full relative accuracy.
pub fn golub_kahan_singular_values(off_sq: &[f64]) -> Vec<f64> {
    let m = off_sq.len() + 1;
    assert!(m.is_multiple_of(2), "off_sq must have odd length 2n - 1");
    let n = m / 2;
    let bound = (0..m)
        .map(|i| {
            let l = if i > 0 { off_sq[i - 1].sqrt() } else { 0.0 };
            let r = if i + 1 < m { off_sq[i].sqrt() } else { 0.0 };
            l + r
        })
        .fold(0.0, f64::max)
        * (1.0 + 8.0 * f64::EPSILON);
    // eigenvalues of the 2n form below σ > 0: n negative ones plus the
    // singular values below σ
    let count_below = |sigma: f64| {
        let mut count = 0;
        let mut q = -sigma;
        for i in 0..m {
            if i > 0 {
                q = -sigma - off_sq[i - 1] / q;
            }
            if q == 0.0 {
                q = -f64::MIN_POSITIVE;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count - n
    };
    (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (0.0, bound);
            bisect(&mut lo, &mut hi, |s| count_below(s) > k);
            0.5 * (lo + hi)
        })
        .collect()
}

/// Shrinks `[lo, hi]` around the switch point of a monotone predicate
/// (`false` below, `true` above) until adjacent floats.
fn bisect(lo: &mut f64, hi: &mut f64, above: impl Fn(f64) -> bool) {
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (*lo + *hi);
        if mid <= *lo || mid >= *hi {
            break;
        }
        if above(mid) {
            *hi = mid;
        } else {
            *lo = mid;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block22() -> TransientBlock {
        // -A = [[1, -1], [-1, 2]]
        TransientBlock::new(vec![1.0, 1.0], vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn two_state_block_eigenvalues() {
        let ev = block22().eigenvalues();
        let s5 = 5f64.sqrt();
        assert!((ev[0] - (3.0 - s5) / 2.0).abs() < 1e-15);
        assert!((ev[1] - (3.0 + s5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn golub_kahan_matches_quadratic() {
        // C = [[1, 0], [-1, 1]], C Cᵀ = [[1, -1], [-1, 2]]
        let sv = golub_kahan_singular_values(&[1.0, 1.0, 1.0]);
        let s5 = 5f64.sqrt();
        assert!((sv[0] * sv[0] - (3.0 - s5) / 2.0).abs() < 1e-15);
        assert!((sv[1] * sv[1] - (3.0 + s5) / 2.0).abs() < 1e-15);
        assert_eq!(golub_kahan_singular_values(&[2.25]), vec![1.5]);
    }

    #[test]
    fn golub_kahan_resolves_tiny_singular_values() {
        // det(C) = product of the diagonal, so the smallest singular value
        // of a strongly graded bidiagonal is recovered with small error.
        let off_sq = [1e-12, 1.0, 1.0];
        let sv = golub_kahan_singular_values(&off_sq);
        let product = sv[0] * sv[1];
        assert!((product - 1e-6).abs() < 1e-20, "{product:e}");
    }

    #[test]
    fn solves_match_dense_products() {
        let b = TransientBlock::new(vec![0.7, 2.0, 0.3, 1.1], vec![0.0, 1.5, 0.4, 3.0]).unwrap();
        let sigma = 0.5 * b.eigenvalue(0);
        let f = b.factor(sigma).unwrap();
        let r = [0.3, -1.0, 2.0, 0.25];
        let n = 4;
        let dense = |i: usize, j: usize| -> f64 {
            if i == j {
                b.up[i] + b.down[i] - sigma
            } else if j == i + 1 {
                -b.up[i]
            } else if i == j + 1 {
                -b.down[i]
            } else {
                0.0
            }
        };
        let y = f.solve(&r);
        for i in 0..n {
            let v: f64 = (0..n).map(|j| dense(i, j) * y[j]).sum();
            assert!((v - r[i]).abs() < 1e-13, "row {i}: {v} vs {}", r[i]);
        }
        let yt = f.solve_transpose(&r);
        for j in 0..n {
            let v: f64 = (0..n).map(|i| dense(i, j) * yt[i]).sum();
            assert!((v - r[j]).abs() < 1e-13, "col {j}: {v} vs {}", r[j]);
        }
    }

    #[test]
    fn factor_rejects_shift_above_spectrum() {
        let b = block22();
        assert!(b.factor(b.eigenvalue(0) * 1.01).is_err());
    }

    #[test]
    fn counts_are_monotone() {
        let b = TransientBlock::new(vec![0.2, 5.0, 0.1], vec![0.0, 9.0, 0.3]).unwrap();
        let ev = b.eigenvalues();
        for (k, &l) in ev.iter().enumerate() {
            assert_eq!(b.count_below(l * (1.0 - 1e-9)), k);
            assert_eq!(b.count_below(l * (1.0 + 1e-9)), k + 1);
        }
    }
}
