//! Perron eigenpairs of stopped and restricted chains, quasi-stationary laws,
//! minimal eigenfunctions, and a full-spectrum reference computation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{scaled_tolerance, BirthDeathSpec, TridiagonalGenerator};
use crate::tridiag::{golub_kahan_singular_values, TransientBlock};

/// Iteration cap for inverse iteration.
pub const MAX_ITERATIONS: usize = 10_000;
/// Relative change of successive eigenvalue estimates and iterates that
/// counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-13;
/// Entries of ρ, f, H and C must exceed this before they are divided by.
/// Only underflow is rejected: the recurrences keep relative accuracy, and
/// stiff chains legitimately produce entries far below 1e-14.
pub const POSITIVITY_FLOOR: f64 = f64::MIN_POSITIVE;

/// Perron data of a transient block: `-A f = λ f`, `π(-A) = λ π`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPerron {
    pub lambda: f64,
    /// Right eigenvector scaled so `right[0] = 1`.
    pub right: Vec<f64>,
    /// Left eigenvector scaled to sum to 1.
    pub left: Vec<f64>,
    pub iterations: usize,
}

/// Shifted inverse iteration on a transient block.
///
/// The shift sits just below the smallest eigenvalue found by bisection, so
/// `-A - σI` is a nonsingular M-matrix and every iterate stays positive.
pub fn block_perron(block: &TransientBlock) -> Result<BlockPerron> {
    let estimate = block.eigenvalue(0);
    let mut margin = 1e-8;
    let factor = loop {
        match block.factor(estimate * (1.0 - margin)) {
            Ok(f) => break f,
            Err(e) if margin >= 1e-2 => return Err(e),
            Err(_) => margin *= 10.0,
        }
    };
    let sigma = estimate * (1.0 - margin);

    let (lambda, mut right, it_r) = iterate(block.len(), sigma, |x| factor.solve(x))?;
    let (lambda_left, mut left, it_l) = iterate(block.len(), sigma, |x| factor.solve_transpose(x))?;
    if (lambda - lambda_left).abs() > 1e-10 * lambda {
        return Err(Error::Residual {
            check: "left/right Perron eigenvalue agreement".into(),
            value: (lambda - lambda_left).abs() / lambda,
            tol: 1e-10,
        });
    }
    let r0 = right[0];
    right.iter_mut().for_each(|v| *v /= r0);
    let total: f64 = left.iter().sum();
    left.iter_mut().for_each(|v| *v /= total);
    Ok(BlockPerron {
        lambda,
        right,
        left,
        iterations: it_r.max(it_l),
    })
}

fn iterate(
    n: usize,
    sigma: f64,
    solve: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(f64, Vec<f64>, usize)> {
    let mut x = vec![1.0; n];
    let mut previous = f64::NAN;
    for k in 0..MAX_ITERATIONS {
        let mut y = solve(&x);
        if k == 0 {
            y.iter_mut().for_each(|v| *v = v.abs());
        }
        // x ≈ (λ - σ) y for the converged direction
        let ratio = x.iter().sum::<f64>() / y.iter().sum::<f64>();
        let lambda = sigma + ratio;
        let scale = y.iter().copied().fold(0.0, f64::max);
        let next: Vec<f64> = y.into_iter().map(|v| v / scale).collect();
        // Tiny entries converge later than λ; require entrywise relative
        // stability so that ratios of small components are accurate.
        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        x = next;
        if k > 0
            && (lambda - previous).abs() <= CONVERGENCE_TOL * lambda
            && change <= CONVERGENCE_TOL
        {
            return Ok((lambda, x, k + 1));
        }
        previous = lambda;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
    })
}

/// Leading nontrivial eigenvalue `-λ` of a stopped generator with its right
/// and left eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadingEigenpair {
    pub lambda: f64,
    /// Strictly decreasing, `f(0) = 1`, `f(N) = 0`.
    pub f: Vec<f64>,
    /// Positive on `0..N`, summing to 1 there, and `pi(N) = -1`.
    pub pi: Vec<f64>,
}

impl LeadingEigenpair {
    /// `(‖Gf + λf‖_∞, ‖G†π + λπ‖_∞)`.
    pub fn residuals(&self, g: &TridiagonalGenerator) -> Result<(f64, f64)> {
        let gf = g.apply(&self.f)?;
        let gpi = g.adjoint_apply(&self.pi)?;
        let rf = sup_dist(&gf, &self.f, self.lambda);
        let rpi = sup_dist(&gpi, &self.pi, self.lambda);
        Ok((rf, rpi))
    }
}

fn sup_dist(gv: &[f64], v: &[f64], lambda: f64) -> f64 {
    gv.iter()
        .zip(v)
        .map(|(a, b)| (a + lambda * b).abs())
        .fold(0.0, f64::max)
}

fn stopped_block(spec: &BirthDeathSpec) -> Result<TransientBlock> {
    let n = spec.top();
    TransientBlock::new(
        (0..n).map(|i| spec.b(i + 1)).collect(),
        (0..n).map(|i| spec.d(i)).collect(),
    )
}

/// Perron eigenpair of a stopped generator.
pub fn leading_eigenpair(g: &TridiagonalGenerator) -> Result<LeadingEigenpair> {
    let spec = g.to_spec()?;
    spec.check_stopped()?;
    let perron = block_perron(&stopped_block(&spec)?)?;
    let mut f = perron.right;
    f.push(0.0);
    let mut pi = perron.left;
    pi.push(-1.0);
    let pair = LeadingEigenpair {
        lambda: perron.lambda,
        f,
        pi,
    };

    let n = spec.top();
    for x in 0..n {
        if !(pair.f[x] > pair.f[x + 1]) {
            return Err(Error::Positivity {
                context: "leading eigenvector monotonicity".into(),
                quantity: "f(x) - f(x+1)",
                index: x,
                value: pair.f[x] - pair.f[x + 1],
            });
        }
        if !(pair.pi[x] > 0.0) {
            return Err(Error::Positivity {
                context: "leading left eigenvector".into(),
                quantity: "pi",
                index: x,
                value: pair.pi[x],
            });
        }
    }
    // f(0) = 1 and max f = 1 coincide because f is decreasing
    let max_f = pair.f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert_eq!(max_f, pair.f[0]);
    let tol = scaled_tolerance(1e-9, &spec);
    let (rf, rpi) = pair.residuals(g)?;
    if rf.max(rpi) > tol {
        return Err(Error::Residual {
            check: "leading eigenpair".into(),
            value: rf.max(rpi),
            tol,
        });
    }
    Ok(pair)
}

/// Quasi-stationary law of the chain stopped at `M+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiStationaryLaw {
    pub stage: usize,
    /// Positive on `0..=M`, zero above, sums to 1.
    pub rho: Vec<f64>,
    /// `H(x) = Σ_{y≤x} ρ(y)`.
    pub cumulative: Vec<f64>,
    /// `b_{M+1} ρ(M)`.
    pub lambda: f64,
}

/// Normalised left Perron vector of the chain stopped at `M+1`, extended by
/// zeros; needs `d_1..d_M > 0` and `d_{M+1} = ... = d_N = 0`.
pub fn quasi_stationary(spec: &BirthDeathSpec, m: usize) -> Result<QuasiStationaryLaw> {
    let n = spec.top();
    if m >= n {
        return Err(Error::InvalidStage {
            index: m,
            top: n,
            reason: "quasi-stationary stage must satisfy M <= N-1",
        });
    }
    spec.check_plus_pattern(m)?;
    let block = TransientBlock::new(
        (0..=m).map(|i| spec.b(i + 1)).collect(),
        (0..=m).map(|i| spec.d(i)).collect(),
    )?;
    let perron = block_perron(&block)?;
    let mut rho = perron.left;
    rho.resize(n + 1, 0.0);
    let mut cumulative = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for &r in &rho {
        acc += r;
        cumulative.push(acc);
    }
    let lambda = spec.b(m + 1) * rho[m];
    Ok(QuasiStationaryLaw {
        stage: m,
        rho,
        cumulative,
        lambda,
    })
}

/// Right Perron vector of the chain restricted to `{M, ..., N}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalEigenfunction {
    pub stage: usize,
    /// Zero below `M`, `f(M) = 1`, strictly decreasing to `f(N) = 0`.
    pub f: Vec<f64>,
    /// `decrements[x] = f(x-1) - f(x)` for `M < x <= N`, zero elsewhere.
    /// Obtained from the flux balance
    /// `b_{x+1} (f(x) - f(x+1)) = λ f(x) + d_x (f(x-1) - f(x))`,
    /// which avoids subtracting nearly equal values of `f`.
    pub decrements: Vec<f64>,
    pub lambda: f64,
}

/// Minimal eigenfunction for the slow-side step at `M`; needs
/// `d_1 = ... = d_M = 0`, `d_{M+1}..d_{N-1} > 0` and `d_N = 0`.
pub fn minimal_eigenfunction(spec: &BirthDeathSpec, m: usize) -> Result<MinimalEigenfunction> {
    let n = spec.top();
    if n < 2 || m > n - 2 {
        return Err(Error::InvalidStage {
            index: m,
            top: n,
            reason: "minimal eigenfunction stage must satisfy M <= N-2",
        });
    }
    spec.check_minus_pattern(m)?;
    let len = n - m;
    let block = TransientBlock::new(
        (0..len).map(|i| spec.b(m + i + 1)).collect(),
        (0..len)
            .map(|i| if i == 0 { 0.0 } else { spec.d(m + i) })
            .collect(),
    )?;
    let perron = block_perron(&block)?;
    let lambda = perron.lambda;
    let mut f = vec![0.0; n + 1];
    f[m..n].copy_from_slice(&perron.right);

    let mut decrements = vec![0.0; n + 1];
    decrements[m + 1] = lambda * f[m] / spec.b(m + 1);
    for x in m + 1..n {
        decrements[x + 1] = (lambda * f[x] + spec.d(x) * decrements[x]) / spec.b(x + 1);
    }
    Ok(MinimalEigenfunction {
        stage: m,
        f,
        decrements,
        lambda,
    })
}

/// Negated nonzero eigenvalues `λ_1 < ... < λ_N` of a stopped generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambdas: Vec<f64>,
}

/// Relative residuals of the trace and determinant identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub trace: f64,
    pub determinant: f64,
}

impl Spectrum {
    pub fn new(mut lambdas: Vec<f64>) -> Self {
        lambdas.sort_by(f64::total_cmp);
        Spectrum { lambdas }
    }

    /// `Σλ = Σb + Σ_{i<N} d_i` and `Πλ = Πb`, as relative residuals.
    pub fn identity_residuals(&self, spec: &BirthDeathSpec) -> IdentityResiduals {
        let n = spec.top();
        let trace_expected: f64 =
            spec.births().iter().sum::<f64>() + spec.deaths()[..n - 1].iter().sum::<f64>();
        let trace: f64 = self.lambdas.iter().sum();
        let log_det: f64 = self.lambdas.iter().map(|l| l.ln()).sum();
        let log_det_expected: f64 = spec.births().iter().map(|b| b.ln()).sum();
        IdentityResiduals {
            trace: (trace - trace_expected).abs() / trace_expected,
            determinant: (log_det - log_det_expected).exp_m1().abs(),
        }
    }

    /// Smallest `(λ_{i+1} - λ_i) / λ_{i+1}`; infinite for a single value.
    pub fn min_relative_gap(&self) -> f64 {
        self.lambdas
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[1])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Reference spectrum via symmetrisation and Sturm bisection.
///
/// The transient block `A` is made symmetric by the diagonal similarity with
/// reversibility weights `w_0 = 1`, `w_x = w_{x-1} b_x / d_x` (kept as
/// logarithms), and the symmetric tridiagonal eigenproblem is solved by
/// bisection.
pub fn spectrum_oracle(spec: &BirthDeathSpec) -> Result<Spectrum> {
    spec.check_stopped()?;
    let n = spec.top();
    // With reversibility weights w_0 = 1, w_x = w_{x-1} b_x / d_x the
    // similarity S = W^{1/2} (-A) W^{-1/2} is symmetric with diagonal
    // b_{x+1} + d_x and off-diagonal -sqrt(b_{x+1} d_{x+1}). It factors as
    // S = C Cᵀ with C lower bidiagonal, C(x, x) = sqrt(b_{x+1}) and
    // C(x+1, x) = -sqrt(d_{x+1}), so the eigenvalues of S are the squared
    // singular values of C.
    let mut off_sq = Vec::with_capacity(2 * n - 1);
    for x in 0..n {
        off_sq.push(spec.b(x + 1));
        if x + 1 < n {
            let d = spec.d(x + 1);
            if !(d > 0.0) {
                return Err(Error::Positivity {
                    context: "reversibility weights".into(),
                    quantity: "d",
                    index: x + 1,
                    value: d,
                });
            }
            off_sq.push(d);
        }
    }
    let lambdas = golub_kahan_singular_values(&off_sq)
        .into_iter()
        .map(|s| s * s)
        .collect();
    Ok(Spectrum::new(lambdas))
}

/// Smallest eigenvalue of `-A` by the rate-parametrised bisection, without
/// forming eigenvectors.
pub fn smallest_decay_rate(spec: &BirthDeathSpec) -> Result<f64> {
    spec.check_stopped()?;
    Ok(stopped_block(spec)?.eigenvalue(0))
}
