//! First-passage laws and the uniformization oracle for `e^{tG}`.
//!
//! Started at 0, the stopped chain reaches `N` after a sum of independent
//! exponential times whose rates are the eigenvalues `λ_1 < ... < λ_N`.
//! Started at `x`, the passage time is a mixture over `Z ~ K⁻(x, ·)` of the
//! suffix sums with rates `λ_{Z+1}, ..., λ_N`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BirthDeathSpec, MarkovKernel};
use crate::spectral::spectrum_oracle;

/// Rates closer than this (relative) are rejected as duplicates.
pub const DUPLICATE_GAP: f64 = 1e-10;
/// Below this relative gap the CDF is evaluated by uniformization.
pub const FALLBACK_GAP: f64 = 1e-6;
/// Above this `Σ|c_i|` the partial-fraction CDF is abandoned as well.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Uniformization rate as a multiple of the largest exit rate.
pub const UNIFORMIZATION_FACTOR: f64 = 1.1;
/// Bound on the neglected Poisson mass.
pub const POISSON_TAIL: f64 = 1e-13;
/// Largest `θt` handled by a single Poisson series.
const DIRECT_LIMIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfMethod {
    PartialFractions,
    Uniformization,
}

/// Law of `σ_1 + ... + σ_n` with independent `σ_i ~ Exp(λ_i)`.
///
/// The empty law is the point mass at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HypoexponentialLaw {
    rates: Vec<f64>,
    // c_i = Π_{j≠i} λ_j / (λ_j - λ_i)
    coefficients: Vec<f64>,
    method: CdfMethod,
}

impl HypoexponentialLaw {
    /// Sorts the rates increasingly and rejects nonpositive or duplicate ones.
    pub fn new(mut rates: Vec<f64>) -> Result<Self> {
        for (i, &r) in rates.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "rate {i} must be positive and finite, got {r}"
                )));
            }
        }
        rates.sort_by(f64::total_cmp);
        let mut min_gap = f64::INFINITY;
        for w in rates.windows(2) {
            let gap = (w[1] - w[0]) / w[1];
            if gap < DUPLICATE_GAP {
                return Err(Error::DuplicateRates {
                    first: w[0],
                    second: w[1],
                    gap,
                });
            }
            min_gap = min_gap.min(gap);
        }
        let coefficients: Vec<f64> = (0..rates.len())
            .map(|i| {
                rates
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &lj)| lj / (lj - rates[i]))
                    .product()
            })
            .collect();
        let condition: f64 = coefficients.iter().map(|c| c.abs()).sum();
        let method = if min_gap < FALLBACK_GAP || !(condition <= CONDITION_LIMIT) {
            CdfMethod::Uniformization
        } else {
            CdfMethod::PartialFractions
        };
        Ok(HypoexponentialLaw {
            rates,
            coefficients,
            method,
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Partial-fraction coefficients `c_i`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `Σ|c_i|`, which bounds the amplification of rounding in the CDF.
    pub fn condition(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum()
    }

    pub fn method(&self) -> CdfMethod {
        self.method
    }

    pub fn mean(&self) -> f64 {
        self.rates.iter().map(|l| 1.0 / l).sum()
    }

    pub fn variance(&self) -> f64 {
        self.rates.iter().map(|l| 1.0 / (l * l)).sum()
    }

    /// `P[σ_1 + ... + σ_n ≤ t]`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || t.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "time must be nonnegative, got {t}"
            )));
        }
        if self.rates.is_empty() {
            return Ok(1.0);
        }
        if t.is_infinite() {
            return Ok(1.0);
        }
        let value = match self.method {
            // Σ c_i = 1, so 1 - Σ c_i e^{-λ_i t} = -Σ c_i expm1(-λ_i t),
            // which keeps full precision for small t.
            CdfMethod::PartialFractions => -self
                .rates
                .iter()
                .zip(&self.coefficients)
                .map(|(l, c)| c * (-l * t).exp_m1())
                .sum::<f64>(),
            CdfMethod::Uniformization => {
                let spec = BirthDeathSpec::pure_birth(self.rates.clone())?;
                let p = transition_probability(&spec, 0, t)?;
                p[self.rates.len()]
            }
        };
        Ok(value.clamp(0.0, 1.0))
    }

    /// One draw of `σ_1 + ... + σ_n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.rates
            .iter()
            .map(|&l| Exp::new(l).expect("positive rate").sample(rng))
            .sum()
    }
}

/// `P[τ ≤ t]` for the law with the given rates.
pub fn hypo_cdf(law: &HypoexponentialLaw, t: f64) -> Result<f64> {
    law.cdf(t)
}

/// Sum of independent exponential draws with the law's rates.
pub fn hypo_sample<R: Rng + ?Sized>(law: &HypoexponentialLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

/// Uniformized chain `P = I + G/θ` with `θ = 1.1 max_x |G(x, x)|`.
#[derive(Debug, Clone)]
pub struct Uniformization {
    theta: f64,
    step: DMatrix<f64>,
}

/// Transition matrix `e^{tG}` with the Poisson truncation bound.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub matrix: DMatrix<f64>,
    /// Bound on the Poisson mass neglected in all series used.
    pub tail_bound: f64,
    /// Number of squarings applied to the base step.
    pub squarings: u32,
}

impl Uniformization {
    pub fn new(spec: &BirthDeathSpec) -> Self {
        let theta = UNIFORMIZATION_FACTOR * spec.max_exit_rate();
        Self::with_rate(spec, theta)
    }

    /// Uses a caller-chosen `θ`, which must dominate every exit rate.
    pub fn with_rate(spec: &BirthDeathSpec, theta: f64) -> Self {
        let n = spec.dim();
        let g = spec.dense_generator();
        let step = DMatrix::identity(n, n) + g / theta;
        Uniformization { theta, step }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `P = I + G/θ`.
    pub fn step_matrix(&self) -> &DMatrix<f64> {
        &self.step
    }

    /// Row `x` of `e^{tG}` as a Poisson mixture of `δ_x P^k`, for moderate
    /// `θt`. Returns the vector and the neglected Poisson mass bound.
    fn direct_row(&self, x: usize, t: f64, tail_tol: f64) -> (Vec<f64>, f64) {
        let n = self.step.nrows();
        let rate = self.theta * t;
        let mut v = DMatrix::<f64>::zeros(1, n);
        v[(0, x)] = 1.0;
        let mut weight = (-rate).exp();
        let mut acc = &v * weight;
        let mut k = 0usize;
        loop {
            let tail = poisson_tail_bound(rate, k, weight);
            if tail < tail_tol {
                let row = acc.iter().copied().collect();
                return (row, tail);
            }
            k += 1;
            v = &v * &self.step;
            weight *= rate / k as f64;
            acc += &v * weight;
        }
    }

    /// Full matrix `Σ_k Poisson(θt; k) P^k` for `θt ≤ 1`.
    fn direct_matrix(&self, t: f64, tail_tol: f64) -> (DMatrix<f64>, f64) {
        let n = self.step.nrows();
        let rate = self.theta * t;
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut weight = (-rate).exp();
        let mut acc = &power * weight;
        let mut k = 0usize;
        loop {
            let tail = poisson_tail_bound(rate, k, weight);
            if tail < tail_tol {
                return (acc, tail);
            }
            k += 1;
            power = &power * &self.step;
            weight *= rate / k as f64;
            acc += &power * weight;
        }
    }

    /// `e^{tG}` by scaling and squaring of a short Poisson series.
    ///
    /// The base step `s = t / 2^k` has `θs ≤ 1`; the base series is
    /// truncated at `POISSON_TAIL / 2^k` so that the total neglected mass
    /// stays below `POISSON_TAIL`. Rows are renormalised after every
    /// squaring to stop the deficit from compounding.
    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        check_time(t)?;
        let rate = self.theta * t;
        let squarings = if rate <= 1.0 {
            0
        } else {
            rate.log2().ceil() as u32
        };
        if squarings > 1000 {
            return Err(Error::InvalidArgument(format!(
                "time {t} too large for uniformization"
            )));
        }
        let scale = 2f64.powi(squarings as i32);
        let (mut m, tail) = self.direct_matrix(t / scale, POISSON_TAIL / scale);
        for _ in 0..squarings {
            m = &m * &m;
            renormalise_rows(&mut m);
        }
        Ok(Propagator {
            matrix: m,
            tail_bound: tail * scale,
            squarings,
        })
    }
}

/// Bound on `Σ_{j>k} e^{-r} r^j / j!` given the `k`-th weight; infinite
/// while the terms are still increasing.
fn poisson_tail_bound(rate: f64, k: usize, weight_k: f64) -> f64 {
    let next = k as f64 + 2.0;
    if rate >= next {
        return f64::INFINITY;
    }
    let w_next = weight_k * rate / (k as f64 + 1.0);
    w_next / (1.0 - rate / next)
}

fn renormalise_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row /= s;
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "time must be finite and nonnegative, got {t}"
        )))
    }
}

fn check_state(spec: &BirthDeathSpec, x: usize) -> Result<()> {
    if x > spec.top() {
        return Err(Error::StateOutOfRange {
            state: x,
            top: spec.top(),
        });
    }
    Ok(())
}

/// Row `x` of `e^{tG}` by uniformization.
pub fn transition_probability(spec: &BirthDeathSpec, x: usize, t: f64) -> Result<Vec<f64>> {
    Ok(transition_probability_with_tail(spec, x, t)?.0)
}

/// Like [`transition_probability`], also returning the bound on the
/// neglected Poisson mass.
pub fn transition_probability_with_tail(
    spec: &BirthDeathSpec,
    x: usize,
    t: f64,
) -> Result<(Vec<f64>, f64)> {
    check_state(spec, x)?;
    check_time(t)?;
    let u = Uniformization::new(spec);
    if u.theta() * t <= DIRECT_LIMIT {
        return Ok(u.direct_row(x, t, POISSON_TAIL));
    }
    let prop = u.propagator(t)?;
    Ok((
        prop.matrix.row(x).iter().copied().collect(),
        prop.tail_bound,
    ))
}

/// Evenly spaced times `start, ..., stop` (`count ≥ 2` points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {count}"
            )));
        }
        if !(start.is_finite() && stop.is_finite() && 0.0 <= start && start < stop) {
            return Err(Error::InvalidArgument(format!(
                "grid needs 0 <= start < stop, got {start}:{stop}"
            )));
        }
        Ok(TimeGrid { start, stop, count })
    }

    pub fn spacing(&self) -> f64 {
        (self.stop - self.start) / (self.count - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.stop
                } else {
                    self.start + i as f64 * h
                }
            })
            .collect()
    }
}

/// Rows `x` of `e^{tG}` at every grid time, advancing by `e^{hG}` between
/// consecutive points.
pub fn transition_probabilities_on_grid(
    spec: &BirthDeathSpec,
    x: usize,
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    check_state(spec, x)?;
    let u = Uniformization::new(spec);
    let step = u.propagator(grid.spacing())?.matrix;
    let first = transition_probability(spec, x, grid.start)?;
    let mut v = DMatrix::from_row_slice(1, first.len(), &first);
    let mut rows = Vec::with_capacity(grid.count);
    rows.push(first);
    for _ in 1..grid.count {
        v = &v * &step;
        rows.push(v.iter().copied().collect());
    }
    Ok(rows)
}

/// Passage time to `N` from `x`: a mixture over `Z ~ K⁻(x, ·)` of
/// hypoexponential laws with rates `λ_{Z+1}, ..., λ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePassageLaw {
    pub start: usize,
    pub weights: Vec<f64>,
    /// `components[z]` has rates `λ_{z+1}, ..., λ_N`; the last is empty.
    pub components: Vec<HypoexponentialLaw>,
}

impl MixturePassageLaw {
    /// Builds the mixture from increasing rates `λ_1..λ_N` and weights
    /// `K⁻(x, ·)`.
    pub fn new(start: usize, weights: Vec<f64>, lambdas: &[f64]) -> Result<Self> {
        let n = lambdas.len();
        if weights.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                found: weights.len(),
            });
        }
        if start > n {
            return Err(Error::StateOutOfRange {
                state: start,
                top: n,
            });
        }
        let tol = 1e-12;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidKernel(format!(
                "mixture weights sum to {total}"
            )));
        }
        for (z, &w) in weights.iter().enumerate() {
            if w < -tol || (z > start && w.abs() > tol) {
                return Err(Error::InvalidKernel(format!(
                    "weight {w:e} at {z} for start {start}"
                )));
            }
        }
        let components = (0..=n)
            .map(|z| HypoexponentialLaw::new(lambdas[z..].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixturePassageLaw {
            start,
            weights,
            components,
        })
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (w, law) in self.weights.iter().zip(&self.components) {
            if *w != 0.0 {
                acc += w * law.cdf(t)?;
            }
        }
        Ok(acc.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, l)| w * l.mean())
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.weights.len() - 1;
        for (z, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = z;
                break;
            }
        }
        self.components[chosen].sample(rng)
    }
}

/// The passage law from `x` with rates taken from the spectrum of `spec`.
pub fn mixture_passage_law(
    spec: &BirthDeathSpec,
    kminus: &MarkovKernel,
    x: usize,
) -> Result<MixturePassageLaw> {
    check_state(spec, x)?;
    if kminus.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: kminus.dim(),
        });
    }
    let spectrum = spectrum_oracle(spec)?;
    MixturePassageLaw::new(x, kminus.row(x), &spectrum.lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_cdf() {
        let law = HypoexponentialLaw::new(vec![1.0]).unwrap();
        assert!((law.cdf(1.0).unwrap() - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert_eq!(law.cdf(0.0).unwrap(), 0.0);
        assert!((law.cdf(1e3).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_rate_cdf_matches_convolution() {
        let law = HypoexponentialLaw::new(vec![2.0, 1.0]).unwrap();
        let e = (-1f64).exp();
        let exact = 1.0 - 2.0 * e + e * e;
        assert!((law.cdf(1.0).unwrap() - exact).abs() < 1e-15);
        assert!((law.cdf(1.0).unwrap() - 0.3995764).abs() < 1e-7);
        assert_eq!(law.rates(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_rates_and_times() {
        assert!(matches!(
            HypoexponentialLaw::new(vec![1.0, 1.0 + 1e-12]),
            Err(Error::DuplicateRates { .. })
        ));
        assert!(HypoexponentialLaw::new(vec![0.0]).is_err());
        let law = HypoexponentialLaw::new(vec![1.0]).unwrap();
        assert!(law.cdf(-1.0).is_err());
        assert!(law.cdf(f64::NAN).is_err());
    }

    #[test]
    fn clustered_rates_fall_back() {
        let law = HypoexponentialLaw::new(vec![1.0, 1.0 + 1e-8, 3.0]).unwrap();
        assert_eq!(law.method(), CdfMethod::Uniformization);
        // P[Γ(2, 1) + Exp(3) ≤ t]
        //   = 1 - e^{-t}(1 + t) - e^{-t}(t/2 - 1/4) - e^{-3t}/4
        let t: f64 = 1.0;
        let limit =
            1.0 - (-t).exp() * (1.0 + t) - (-t).exp() * (t / 2.0 - 0.25) - (-3.0 * t).exp() / 4.0;
        let got = law.cdf(t).unwrap();
        assert!((got - limit).abs() < 1e-7, "{got} vs {limit}");
    }

    #[test]
    fn empty_law_is_point_mass() {
        let law = HypoexponentialLaw::new(vec![]).unwrap();
        assert_eq!(law.cdf(0.0).unwrap(), 1.0);
        assert_eq!(law.mean(), 0.0);
    }

    #[test]
    fn sample_mean_is_close() {
        let law = HypoexponentialLaw::new(vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        let se = (law.variance() / n as f64).sqrt();
        assert!((mean - 1.5).abs() < 4.0 * se);
    }

    #[test]
    fn transition_probability_basics() {
        let spec = BirthDeathSpec::pure_birth(vec![1.0]).unwrap();
        assert_eq!(
            transition_probability(&spec, 0, 0.0).unwrap(),
            vec![1.0, 0.0]
        );
        for t in [0.1, 1.0, 7.0, 200.0] {
            let p = transition_probability(&spec, 0, t).unwrap();
            assert!((p[0] - (-t).exp()).abs() < 1e-12, "t = {t}");
            assert!((p[1] + (-t).exp_m1()).abs() < 1e-12, "t = {t}");
        }
        assert!(matches!(
            transition_probability(&spec, 2, 1.0),
            Err(Error::StateOutOfRange { .. })
        ));
    }

    #[test]
    fn squaring_agrees_with_direct_series() {
        let spec =
            BirthDeathSpec::stopped(vec![1.3, 0.4, 2.0, 0.9], vec![2.2, 0.7, 1.1, 0.0]).unwrap();
        let u = Uniformization::new(&spec);
        let t = 30.0 / u.theta();
        let (direct, tail) = u.direct_row(1, t, POISSON_TAIL);
        assert!(tail < POISSON_TAIL);
        let prop = u.propagator(t).unwrap();
        assert!(prop.squarings > 0);
        assert!(prop.tail_bound < POISSON_TAIL);
        for (a, b) in direct.iter().zip(prop.matrix.row(1).iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn grid_matches_pointwise() {
        let spec = BirthDeathSpec::stopped(vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let grid = TimeGrid::new(0.0, 40.0, 9).unwrap();
        let rows = transition_probabilities_on_grid(&spec, 0, &grid).unwrap();
        for (t, row) in grid.points().iter().zip(&rows) {
            let p = transition_probability(&spec, 0, *t).unwrap();
            for (a, b) in row.iter().zip(&p) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn mixture_endpoints() {
        let lambdas = [0.5, 2.0];
        let top = MixturePassageLaw::new(2, vec![0.0, 0.0, 1.0], &lambdas).unwrap();
        assert_eq!(top.cdf(0.0).unwrap(), 1.0);
        let bottom = MixturePassageLaw::new(0, vec![1.0, 0.0, 0.0], &lambdas).unwrap();
        let full = HypoexponentialLaw::new(lambdas.to_vec()).unwrap();
        assert_eq!(bottom.cdf(1.3).unwrap(), full.cdf(1.3).unwrap());
        assert!(MixturePassageLaw::new(0, vec![0.5, 0.5, 0.0], &lambdas).is_err());
    }
}
