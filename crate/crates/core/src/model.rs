//! Rate specifications, tridiagonal generators and probability kernels.
//!
//! States are `0..=N`. Rates are 1-indexed as in the usual notation for
//! birth-and-death chains: `b(x)` is the rate of the jump `x-1 -> x` and
//! `d(x)` the rate of the jump `x -> x-1`, for `1 <= x <= N`. Outside that
//! range both accessors return 0, which encodes the boundary conventions
//! `d_0 = 0` and `b_{N+1} = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Birth and death rates of a chain on `{0, ..., N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct BirthDeathSpec {
    // birth[i] = b_{i+1}, death[i] = d_{i+1}
    birth: Vec<f64>,
    death: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(rename = "N")]
    n: usize,
    b: Vec<f64>,
    d: Vec<f64>,
}

impl TryFrom<SpecFile> for BirthDeathSpec {
    type Error = Error;

    fn try_from(file: SpecFile) -> Result<Self> {
        if file.b.len() != file.n {
            return Err(Error::InvalidSpec(format!(
                "\"b\" has length {} but N = {}",
                file.b.len(),
                file.n
            )));
        }
        if file.d.len() != file.n {
            return Err(Error::InvalidSpec(format!(
                "\"d\" has length {} but N = {} (d_N must be given explicitly)",
                file.d.len(),
                file.n
            )));
        }
        BirthDeathSpec::new(file.b, file.d)
    }
}

impl From<BirthDeathSpec> for SpecFile {
    fn from(spec: BirthDeathSpec) -> Self {
        SpecFile {
            n: spec.top(),
            b: spec.birth,
            d: spec.death,
        }
    }
}

impl BirthDeathSpec {
    /// Creates a spec from `b_1..b_N` and `d_1..d_N`.
    pub fn new(birth: Vec<f64>, death: Vec<f64>) -> Result<Self> {
        if birth.is_empty() {
            return Err(Error::InvalidSpec("N must be at least 1".into()));
        }
        if birth.len() != death.len() {
            return Err(Error::InvalidSpec(format!(
                "b has length {} but d has length {}",
                birth.len(),
                death.len()
            )));
        }
        for (i, &b) in birth.iter().enumerate() {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::NonPositiveBirth {
                    index: i + 1,
                    value: b,
                });
            }
        }
        for (i, &d) in death.iter().enumerate() {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::NegativeDeath {
                    index: i + 1,
                    value: d,
                });
            }
        }
        Ok(BirthDeathSpec { birth, death })
    }

    /// Creates a spec and checks that it is a stopped chain: `d_N = 0` and
    /// `d_1, ..., d_{N-1} > 0`.
    pub fn stopped(birth: Vec<f64>, death: Vec<f64>) -> Result<Self> {
        let spec = Self::new(birth, death)?;
        spec.check_stopped()?;
        Ok(spec)
    }

    /// A pure-birth chain with rates `b_1..b_N`.
    pub fn pure_birth(birth: Vec<f64>) -> Result<Self> {
        let death = vec![0.0; birth.len()];
        Self::new(birth, death)
    }

    /// The top state `N`.
    pub fn top(&self) -> usize {
        self.birth.len()
    }

    /// Number of states, `N + 1`.
    pub fn dim(&self) -> usize {
        self.birth.len() + 1
    }

    /// Birth rate into `x`, zero outside `1..=N`.
    pub fn b(&self, x: usize) -> f64 {
        if x >= 1 && x <= self.top() {
            self.birth[x - 1]
        } else {
            0.0
        }
    }

    /// Death rate out of `x`, zero outside `1..=N`.
    pub fn d(&self, x: usize) -> f64 {
        if x >= 1 && x <= self.top() {
            self.death[x - 1]
        } else {
            0.0
        }
    }

    pub fn births(&self) -> &[f64] {
        &self.birth
    }

    pub fn deaths(&self) -> &[f64] {
        &self.death
    }

    /// Total rate of leaving `x`.
    pub fn exit_rate(&self, x: usize) -> f64 {
        self.b(x + 1) + self.d(x)
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.dim())
            .map(|x| self.exit_rate(x))
            .fold(0.0, f64::max)
    }

    pub fn max_rate(&self) -> f64 {
        self.birth
            .iter()
            .chain(self.death.iter())
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn is_pure_birth(&self) -> bool {
        self.death.iter().all(|&d| d == 0.0)
    }

    /// `d_N = 0` and `d_1, ..., d_{N-1} > 0`.
    pub fn check_stopped(&self) -> Result<()> {
        let n = self.top();
        if self.d(n) != 0.0 {
            return Err(Error::StagePattern(format!(
                "stopped chain requires d_N = 0, got d_{n} = {}",
                self.d(n)
            )));
        }
        self.require_positive_deaths(1, n - 1, "stopped chain")
    }

    /// Pattern consumed by the fast-side step at `m`: `d_1..d_m > 0`,
    /// `d_{m+1} = ... = d_N = 0`.
    pub fn check_plus_pattern(&self, m: usize) -> Result<()> {
        self.require_positive_deaths(1, m, "fast-side stage")?;
        self.require_zero_deaths(m + 1, self.top(), "fast-side stage")
    }

    /// Pattern consumed by the slow-side step at `m`: `d_1 = ... = d_m = 0`,
    /// `d_{m+1}..d_{N-1} > 0`, `d_N = 0`.
    pub fn check_minus_pattern(&self, m: usize) -> Result<()> {
        let n = self.top();
        self.require_zero_deaths(1, m, "slow-side stage")?;
        self.require_positive_deaths(m + 1, n - 1, "slow-side stage")?;
        self.require_zero_deaths(n, n, "slow-side stage")
    }

    fn require_positive_deaths(&self, from: usize, to: usize, what: &str) -> Result<()> {
        for x in from..=to {
            if !(self.d(x) > 0.0) {
                return Err(Error::StagePattern(format!(
                    "{what} requires d_{x} > 0, got {}",
                    self.d(x)
                )));
            }
        }
        Ok(())
    }

    fn require_zero_deaths(&self, from: usize, to: usize, what: &str) -> Result<()> {
        for x in from..=to {
            if self.d(x) != 0.0 {
                return Err(Error::StagePattern(format!(
                    "{what} requires d_{x} = 0, got {}",
                    self.d(x)
                )));
            }
        }
        Ok(())
    }

    /// Dense `(N+1) x (N+1)` generator matrix.
    pub fn dense_generator(&self) -> DMatrix<f64> {
        TridiagonalGenerator::from_spec(self).to_dense()
    }
}

/// Builds the generator `G` of a birth-and-death chain.
pub fn build_generator(spec: &BirthDeathSpec) -> TridiagonalGenerator {
    TridiagonalGenerator::from_spec(spec)
}

/// Tridiagonal generator stored by diagonals.
///
/// `lower[x] = G(x, x-1)`, `diag[x] = G(x, x)`, `upper[x] = G(x, x+1)`, with
/// `lower[0] = upper[N] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalGenerator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalGenerator {
    pub fn from_spec(spec: &BirthDeathSpec) -> Self {
        let n = spec.dim();
        let upper: Vec<f64> = (0..n).map(|x| spec.b(x + 1)).collect();
        let lower: Vec<f64> = (0..n).map(|x| spec.d(x)).collect();
        let diag = (0..n).map(|x| -(upper[x] + lower[x])).collect();
        TridiagonalGenerator { lower, diag, upper }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Recovers the rate specification.
    pub fn to_spec(&self) -> Result<BirthDeathSpec> {
        let n = self.dim();
        BirthDeathSpec::new(self.upper[..n - 1].to_vec(), self.lower[1..].to_vec())
    }

    /// `Gf(x) = b_{x+1}(f(x+1) - f(x)) + d_x(f(x-1) - f(x))`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len(n, f.len())?;
        Ok((0..n)
            .map(|x| {
                let up = if x + 1 < n {
                    self.upper[x] * (f[x + 1] - f[x])
                } else {
                    0.0
                };
                let down = if x > 0 {
                    self.lower[x] * (f[x - 1] - f[x])
                } else {
                    0.0
                };
                up + down
            })
            .collect())
    }

    /// Adjoint action `G†π(x) = b_x π(x-1) - b_{x+1} π(x) + d_{x+1} π(x+1) - d_x π(x)`.
    pub fn adjoint_apply(&self, pi: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len(n, pi.len())?;
        Ok((0..n)
            .map(|x| {
                let mut v = self.diag[x] * pi[x];
                if x > 0 {
                    v += self.upper[x - 1] * pi[x - 1];
                }
                if x + 1 < n {
                    v += self.lower[x + 1] * pi[x + 1];
                }
                v
            })
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if j == i + 1 {
                self.upper[i]
            } else if i == j + 1 {
                self.lower[i]
            } else {
                0.0
            }
        })
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|v| -v).fold(0.0, f64::max)
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A square probability kernel on `{0, ..., N}`, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    matrix: DMatrix<f64>,
}

impl MarkovKernel {
    /// Wraps a square matrix without checking stochasticity; use
    /// [`MarkovKernel::validate`] for a report.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Ok(MarkovKernel { matrix })
    }

    /// Wraps a matrix, rejecting negative entries and rows that do not sum
    /// to one within `tol`.
    pub fn checked(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        let kernel = Self::from_matrix(matrix)?;
        let report = kernel.validate(false, false);
        if report.max_row_sum_deviation > tol || report.most_negative_entry < -tol {
            return Err(Error::InvalidKernel(format!(
                "row-sum deviation {:e}, most negative entry {:e}",
                report.max_row_sum_deviation, report.most_negative_entry
            )));
        }
        Ok(kernel)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(rows_to_matrix(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        MarkovKernel {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix[(x, y)]
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.matrix.row(x).iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.matrix)
    }

    /// Validation report. `require_lower` asks for `K(x, y) = 0` when `y > x`,
    /// `require_fix_top` for `K(N, N) = 1`.
    pub fn validate(&self, require_lower: bool, require_fix_top: bool) -> KernelReport {
        let n = self.dim();
        let mut report = KernelReport::default();
        let mut most_negative = 0.0f64;
        for x in 0..n {
            let sum: f64 = self.matrix.row(x).iter().sum();
            report.max_row_sum_deviation = report.max_row_sum_deviation.max((sum - 1.0).abs());
            for y in 0..n {
                let v = self.matrix[(x, y)];
                if v < most_negative {
                    most_negative = v;
                }
            }
        }
        report.most_negative_entry = most_negative;
        if require_lower {
            let mut worst = UpperViolation {
                value: 0.0,
                at: None,
            };
            for x in 0..n {
                for y in x + 1..n {
                    let v = self.matrix[(x, y)].abs();
                    if v > worst.value {
                        worst = UpperViolation {
                            value: v,
                            at: Some((x, y)),
                        };
                    }
                }
            }
            report.max_upper_entry = Some(worst);
        }
        if require_fix_top && n > 0 {
            report.top_deviation = Some((self.matrix[(n - 1, n - 1)] - 1.0).abs());
        }
        report
    }
}

/// Product `K_1 K_2 ... K_m` in the given order.
pub fn compose_kernels(kernels: &[MarkovKernel]) -> Result<MarkovKernel> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot compose an empty kernel list".into()))?;
    let mut acc = first.matrix.clone();
    for k in &kernels[1..] {
        if k.dim() != acc.nrows() {
            return Err(Error::DimensionMismatch {
                expected: acc.nrows(),
                found: k.dim(),
            });
        }
        acc = &acc * &k.matrix;
    }
    MarkovKernel::from_matrix(acc)
}

/// Largest strictly-upper entry of a kernel and where it sits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpperViolation {
    pub value: f64,
    pub at: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KernelReport {
    pub max_row_sum_deviation: f64,
    /// Smallest entry, or 0 when none is negative.
    pub most_negative_entry: f64,
    pub max_upper_entry: Option<UpperViolation>,
    /// `|K(N, N) - 1|`.
    pub top_deviation: Option<f64>,
}

impl KernelReport {
    pub fn worst(&self) -> f64 {
        let mut w = self.max_row_sum_deviation.max(-self.most_negative_entry);
        if let Some(u) = self.max_upper_entry {
            w = w.max(u.value);
        }
        if let Some(t) = self.top_deviation {
            w = w.max(t);
        }
        w
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

/// Max-entry difference between two matrices of equal shape.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch {
                expected: ncols,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Absolute tolerance for algebraic identities, scaled linearly with the
/// largest rate and with `N` beyond 16.
pub fn scaled_tolerance(base: f64, spec: &BirthDeathSpec) -> f64 {
    base * spec.max_rate().max(1.0) * (spec.top() as f64 / 16.0).max(1.0)
}
