//! Fast-side and slow-side kernel constructions.
//!
//! The fast side peels off one quasi-stationary law per stage, running
//! `M = N-1, ..., 1`, and produces `K⁺` with `K⁺ G = G⁺ K⁺`. The slow side
//! peels off one minimal eigenfunction per stage, running `M = 0, ..., N-2`,
//! and produces `K⁻` with `G K⁻ = K⁻ G⁻`. In both cases `G±` is a pure-birth
//! generator whose rates are the negated nonzero eigenvalues of `G`.
//!
//! Each next-stage generator is assembled from closed-form rates rather than
//! from `K G K⁻¹`; the stage relation is then checked numerically.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    compose_kernels, max_abs_diff, scaled_tolerance, BirthDeathSpec, KernelReport, MarkovKernel,
};
use crate::spectral::{minimal_eigenfunction, quasi_stationary, POSITIVITY_FLOOR};

/// Base tolerance for the residual guard inside the stage builders.
pub const STAGE_GUARD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Plus => f.write_str("plus"),
            Side::Minus => f.write_str("minus"),
        }
    }
}

/// Which side of the kernel the source generator sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `K A - B K` (fast side).
    Left,
    /// `A K - K B` (slow side).
    Right,
}

impl Side {
    pub fn orientation(self) -> Orientation {
        match self {
            Side::Plus => Orientation::Left,
            Side::Minus => Orientation::Right,
        }
    }
}

/// Max-entry residual of `K A - B K` or `A K - K B`.
pub fn verify_intertwining(
    a: &DMatrix<f64>,
    kernel: &MarkovKernel,
    b: &DMatrix<f64>,
    orientation: Orientation,
) -> Result<f64> {
    let k = kernel.matrix();
    let n = k.nrows();
    for m in [a, b] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.nrows(),
            });
        }
    }
    let (lhs, rhs) = match orientation {
        Orientation::Left => (k * a, b * k),
        Orientation::Right => (a * k, k * b),
    };
    Ok(max_abs_diff(&lhs, &rhs))
}

/// One fast-side stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResultPlus {
    pub stage: usize,
    pub kernel: MarkovKernel,
    pub next_spec: BirthDeathSpec,
    /// The rate `b'_{M+1}` extracted at this stage.
    pub lambda: f64,
    pub residual: f64,
}

/// One slow-side stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResultMinus {
    pub stage: usize,
    pub kernel: MarkovKernel,
    pub next_spec: BirthDeathSpec,
    /// `C_M, ..., C_{N-1}`.
    pub constants: Vec<f64>,
    /// The rate `ḃ_{M+1}` extracted at this stage.
    pub lambda: f64,
    pub residual: f64,
}

fn guard(value: f64, quantity: &'static str, index: usize, context: &str) -> Result<()> {
    if value > POSITIVITY_FLOOR && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Positivity {
            context: context.to_string(),
            quantity,
            index,
            value,
        })
    }
}

fn check_residual(check: String, value: f64, spec: &BirthDeathSpec) -> Result<f64> {
    let tol = scaled_tolerance(STAGE_GUARD_TOL, spec);
    if value <= tol {
        Ok(value)
    } else {
        Err(Error::Residual { check, value, tol })
    }
}

/// Fast-side step at `1 <= M <= N-1`.
///
/// With `ρ` the quasi-stationary law of the chain stopped at `M+1` and `H`
/// its cumulative sums, `K(x, y) = 1{y ≤ x} ρ(y) / H(x)` for `x ≤ M` and
/// `K(x, ·) = δ_x` above. The next generator has
///
/// ```text
/// b'_{x+1} = b_{x+1} ρ(x) H(x+1) / (H(x) ρ(x+1))   x < M
///          = λ                                     x = M
///          = b_{x+1}                               x > M
/// d'_x     = d_{x+1} ρ(x+1) H(x-1) / (H(x) ρ(x))   0 < x < M, zero otherwise.
/// ```
pub fn inductive_step_plus(spec: &BirthDeathSpec, m: usize) -> Result<StageResultPlus> {
    let n = spec.top();
    if m < 1 || m >= n {
        return Err(Error::InvalidStage {
            index: m,
            top: n,
            reason: "fast-side stage must satisfy 1 <= M <= N-1",
        });
    }
    let qs = quasi_stationary(spec, m)?;
    let (rho, h) = (&qs.rho, &qs.cumulative);
    let context = format!("fast-side stage M = {m}");
    for x in 0..=m {
        guard(rho[x], "rho", x, &context)?;
        guard(h[x], "H", x, &context)?;
    }

    let dim = n + 1;
    let kernel = DMatrix::from_fn(dim, dim, |x, y| {
        if x <= m {
            if y <= x {
                rho[y] / h[x]
            } else {
                0.0
            }
        } else if x == y {
            1.0
        } else {
            0.0
        }
    });

    let birth: Vec<f64> = (0..n)
        .map(|x| {
            if x < m {
                spec.b(x + 1) * rho[x] * h[x + 1] / (h[x] * rho[x + 1])
            } else if x == m {
                qs.lambda
            } else {
                spec.b(x + 1)
            }
        })
        .collect();
    let death: Vec<f64> = (1..=n)
        .map(|x| {
            if x < m {
                spec.d(x + 1) * rho[x + 1] * h[x - 1] / (h[x] * rho[x])
            } else {
                0.0
            }
        })
        .collect();
    let next_spec = BirthDeathSpec::new(birth, death)?;
    let kernel = MarkovKernel::from_matrix(kernel)?;
    let residual = verify_intertwining(
        &spec.dense_generator(),
        &kernel,
        &next_spec.dense_generator(),
        Orientation::Left,
    )?;
    let residual = check_residual(format!("fast-side stage M = {m}"), residual, spec)?;
    Ok(StageResultPlus {
        stage: m,
        kernel,
        next_spec,
        lambda: qs.lambda,
        residual,
    })
}

/// Slow-side step at `0 <= M <= N-2`.
///
/// With `f` the minimal eigenfunction on `{M, ..., N}` and `C_M = 1`,
/// `C_y = (f(y-1) - f(y)) / (f(y-1) f(y))`, the kernel is
/// `K(x, y) = C_y 1{y ≤ x} f(x)` for `M ≤ y ≤ N-1` and `K(x, y) = 1{x = y}`
/// for the remaining columns. Expanding `G K` in the columns of `K` gives
///
/// ```text
/// ḃ_y     = b_y                                    y ≤ M
///         = λ                                      y = M+1
///         = b_y C_y f(y) / (C_{y-1} f(y-1))        M+1 < y < N
///         = b_N / (C_{N-1} f(N-1))                 y = N
/// ḋ_{y+1} = d_y C_y f(y-1) / (C_{y+1} f(y))        M+1 ≤ y ≤ N-2, zero otherwise.
/// ```
pub fn inductive_step_minus(spec: &BirthDeathSpec, m: usize) -> Result<StageResultMinus> {
    let n = spec.top();
    if n < 2 || m > n - 2 {
        return Err(Error::InvalidStage {
            index: m,
            top: n,
            reason: "slow-side stage must satisfy 0 <= M <= N-2",
        });
    }
    let mef = minimal_eigenfunction(spec, m)?;
    let (f, g) = (&mef.f, &mef.decrements);
    let context = format!("slow-side stage M = {m}");
    for x in m..n {
        guard(f[x], "f", x, &context)?;
    }
    for x in m + 1..=n {
        guard(g[x], "f(x-1) - f(x)", x, &context)?;
    }

    // c[y] = C_y for m <= y <= n-1
    let mut c = vec![0.0; n + 1];
    c[m] = 1.0;
    for y in m + 1..n {
        c[y] = g[y] / (f[y - 1] * f[y]);
        guard(c[y], "C", y, &context)?;
    }

    let dim = n + 1;
    let kernel = DMatrix::from_fn(dim, dim, |x, y| {
        let in_band = (m..n).contains(&y);
        if !in_band {
            if x == y {
                1.0
            } else {
                0.0
            }
        } else if (m..n).contains(&x) && y <= x {
            c[y] * f[x]
        } else {
            0.0
        }
    });

    let birth: Vec<f64> = (1..=n)
        .map(|y| {
            if y <= m {
                spec.b(y)
            } else if y == m + 1 {
                mef.lambda
            } else if y < n {
                spec.b(y) * c[y] * f[y] / (c[y - 1] * f[y - 1])
            } else {
                spec.b(n) / (c[n - 1] * f[n - 1])
            }
        })
        .collect();
    let mut death = vec![0.0; n];
    for y in m + 1..=n.saturating_sub(2) {
        // death[y] holds ḋ_{y+1}
        death[y] = spec.d(y) * c[y] * f[y - 1] / (c[y + 1] * f[y]);
    }
    let next_spec = BirthDeathSpec::new(birth, death)?;
    let kernel = MarkovKernel::from_matrix(kernel)?;
    let residual = verify_intertwining(
        &spec.dense_generator(),
        &kernel,
        &next_spec.dense_generator(),
        Orientation::Right,
    )?;
    let residual = check_residual(format!("slow-side stage M = {m}"), residual, spec)?;
    Ok(StageResultMinus {
        stage: m,
        kernel,
        next_spec,
        constants: c[m..n].to_vec(),
        lambda: mef.lambda,
        residual,
    })
}

/// One stage of a chain: `source` and `target` generators linked by `kernel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Index `M` at which the step was applied.
    pub index: usize,
    pub source: BirthDeathSpec,
    pub target: BirthDeathSpec,
    #[serde(with = "kernel_rows")]
    pub kernel: MarkovKernel,
    pub lambda: f64,
}

/// Sequence of stages from `G` to a pure-birth generator, with the composed
/// kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntertwiningChain {
    pub side: Side,
    pub spec: BirthDeathSpec,
    /// In construction order: `M = N-1, ..., 1` (plus) or `M = 0, ..., N-2`
    /// (minus).
    pub stages: Vec<Stage>,
    #[serde(with = "kernel_rows")]
    pub composed: MarkovKernel,
    pub pure_birth: BirthDeathSpec,
}

/// Residuals and structural checks of a built chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub side: Side,
    pub stage_residuals: Vec<f64>,
    pub composed_residual: f64,
    pub kernel: KernelReport,
    /// `b⁺` strictly decreasing or `b⁻` strictly increasing.
    pub ordered: bool,
    pub pure_birth: bool,
}

impl ChainReport {
    pub fn max_residual(&self) -> f64 {
        self.stage_residuals
            .iter()
            .copied()
            .fold(self.composed_residual, f64::max)
    }

    pub fn passes(&self, residual_tol: f64, kernel_tol: f64) -> bool {
        self.ordered
            && self.pure_birth
            && self.max_residual() <= residual_tol
            && self.kernel.passes(kernel_tol)
    }
}

impl IntertwiningChain {
    /// Generators from `G` down to the pure-birth one.
    pub fn stage_specs(&self) -> Vec<&BirthDeathSpec> {
        let mut specs = vec![&self.spec];
        specs.extend(self.stages.iter().map(|s| &s.target));
        specs
    }

    /// Pure-birth rates `b±_1, ..., b±_N`.
    pub fn rates(&self) -> &[f64] {
        self.pure_birth.births()
    }

    /// Recomputes every residual from the stored data.
    pub fn report(&self) -> Result<ChainReport> {
        let orientation = self.side.orientation();
        let stage_residuals = self
            .stages
            .iter()
            .map(|s| {
                verify_intertwining(
                    &s.source.dense_generator(),
                    &s.kernel,
                    &s.target.dense_generator(),
                    orientation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let composed_residual = verify_intertwining(
            &self.spec.dense_generator(),
            &self.composed,
            &self.pure_birth.dense_generator(),
            orientation,
        )?;
        let rates = self.rates();
        let ordered = rates.windows(2).all(|w| match self.side {
            Side::Plus => w[0] > w[1],
            Side::Minus => w[0] < w[1],
        });
        Ok(ChainReport {
            side: self.side,
            stage_residuals,
            composed_residual,
            kernel: self.composed.validate(true, true),
            ordered,
            pure_birth: self.pure_birth.is_pure_birth(),
        })
    }

    /// Checks that consecutive stages link up and that the composed kernel is
    /// the product of the stage kernels in the documented order.
    pub fn check_linkage(&self) -> Result<f64> {
        let mut current = &self.spec;
        for s in &self.stages {
            if &s.source != current {
                return Err(Error::InvalidArgument(format!(
                    "stage M = {} does not start from the previous target",
                    s.index
                )));
            }
            current = &s.target;
        }
        if current != &self.pure_birth {
            return Err(Error::InvalidArgument(
                "last stage target differs from the pure-birth generator".into(),
            ));
        }
        let product = compose_kernels(&self.kernels_in_product_order())
            .unwrap_or_else(|_| MarkovKernel::identity(self.spec.dim()));
        Ok(max_abs_diff(product.matrix(), self.composed.matrix()))
    }

    /// Stage kernels ordered as `K^{(1)} ... K^{(N-1)}`.
    pub fn kernels_in_product_order(&self) -> Vec<MarkovKernel> {
        let mut ks: Vec<MarkovKernel> = self.stages.iter().map(|s| s.kernel.clone()).collect();
        if self.side == Side::Plus {
            ks.reverse();
        }
        ks
    }
}

fn finish(
    side: Side,
    spec: &BirthDeathSpec,
    stages: Vec<Stage>,
    current: BirthDeathSpec,
) -> Result<IntertwiningChain> {
    let mut chain = IntertwiningChain {
        side,
        spec: spec.clone(),
        stages,
        composed: MarkovKernel::identity(spec.dim()),
        pure_birth: current,
    };
    let ks = chain.kernels_in_product_order();
    if !ks.is_empty() {
        chain.composed = compose_kernels(&ks)?;
    }
    Ok(chain)
}

/// Runs the fast-side steps `M = N-1, ..., 1` and composes
/// `K⁺ = K^{(1)+} ... K^{(N-1)+}`.
pub fn build_plus_chain(spec: &BirthDeathSpec) -> Result<IntertwiningChain> {
    spec.check_stopped()?;
    let n = spec.top();
    let mut stages = Vec::with_capacity(n.saturating_sub(1));
    let mut current = spec.clone();
    for m in (1..n).rev() {
        let step = inductive_step_plus(&current, m)?;
        stages.push(Stage {
            index: m,
            source: current,
            target: step.next_spec.clone(),
            kernel: step.kernel,
            lambda: step.lambda,
        });
        current = step.next_spec;
    }
    finish(Side::Plus, spec, stages, current)
}

/// Runs the slow-side steps `M = 0, ..., N-2` and composes
/// `K⁻ = K^{(1)-} ... K^{(N-1)-}`.
pub fn build_minus_chain(spec: &BirthDeathSpec) -> Result<IntertwiningChain> {
    spec.check_stopped()?;
    let n = spec.top();
    let mut stages = Vec::with_capacity(n.saturating_sub(1));
    let mut current = spec.clone();
    for m in 0..n.saturating_sub(1) {
        let step = inductive_step_minus(&current, m)?;
        stages.push(Stage {
            index: m,
            source: current,
            target: step.next_spec.clone(),
            kernel: step.kernel,
            lambda: step.lambda,
        });
        current = step.next_spec;
    }
    finish(Side::Minus, spec, stages, current)
}

pub(crate) mod kernel_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::model::MarkovKernel;

    pub fn serialize<S: Serializer>(k: &MarkovKernel, s: S) -> Result<S::Ok, S::Error> {
        k.to_rows().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MarkovKernel, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        MarkovKernel::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
