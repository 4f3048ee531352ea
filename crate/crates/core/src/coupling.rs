//! Coupled simulation of `(X⁻, X, X⁺)`.
//!
//! A pair coupling joins an autonomous chain with transition matrix `P` to
//! an averaged chain with transition matrix `P'` through a link kernel `K`
//! with `P K = K P'`. Both are uniformized with a common rate `θ`. From a pair
//! `(a, v)` with `K(a, v) > 0` the joint move is
//!
//! ```text
//! P̂((a, v), (ã, ṽ)) = P'(v, ṽ) · P(a, ã) K(ã, ṽ) / (P K)(a, ṽ),
//! ```
//!
//! so the averaged coordinate moves with `P'` and the autonomous one follows
//! the posterior given `ṽ`. Summing over `v ~ K(a, ·)` gives
//! `P(a, ã) K(ã, ṽ)`: the autonomous coordinate is Markov with `P` and the
//! conditional law of the averaged coordinate stays `K(a_t, ·)`.
//!
//! The first level couples `X⁺` (autonomous) with `X` through `K⁺`. The
//! second level takes the first-level pair chain as autonomous and couples
//! it with `X⁻` through `L((x⁺, x), z) = K⁻(x, z)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intertwine::{IntertwiningChain, Side};
use crate::model::{max_abs_diff, BirthDeathSpec, MarkovKernel};
use crate::passage::{transition_probability, HypoexponentialLaw, UNIFORMIZATION_FACTOR};
use crate::stats::{
    chi_square_test, ks_test, moment_summary, ChiSquareResult, KsResult, MomentSummary,
};

/// Base tolerance for the intertwining precondition of a pair coupling,
/// scaled by `max(1, θ)`.
pub const COUPLING_TOL: f64 = 1e-10;
/// Family-wise level of the χ² battery.
pub const CHI_SQUARE_ALPHA: f64 = 0.01;
/// Probe times of the χ² battery as fractions of the mean passage time.
pub const PROBE_FRACTIONS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];
/// Jumps after which a simulated path is abandoned.
pub const MAX_JUMPS: u64 = 1_000_000_000;

const NONE: usize = usize::MAX;

/// `I + G / θ`.
pub fn uniformized(generator: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    let n = generator.nrows();
    DMatrix::identity(n, n) + generator / theta
}

/// Largest `-G(x, x)`.
pub fn max_exit_rate(generator: &DMatrix<f64>) -> f64 {
    generator.diagonal().iter().map(|v| -v).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
struct JumpTable {
    /// `θ (1 - P̂(s, s))`.
    rate: f64,
    targets: Vec<usize>,
    cumulative: Vec<f64>,
}

impl JumpTable {
    fn sample(&self, u: f64) -> usize {
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.targets[k.min(self.targets.len() - 1)]
    }
}

/// Joint chain of an autonomous and an averaged chain linked by `K`.
#[derive(Debug, Clone)]
pub struct PairCoupling {
    theta: f64,
    autonomous: DMatrix<f64>,
    averaged: DMatrix<f64>,
    link: DMatrix<f64>,
    states: Vec<(usize, usize)>,
    lookup: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    jumps: Vec<JumpTable>,
    residual: f64,
}

impl PairCoupling {
    /// Builds the joint chain from uniformized transition matrices `P`
    /// (autonomous, `n_a x n_a`), `P'` (averaged, `n_v x n_v`) and a link
    /// `K` (`n_a x n_v`), all with rate `θ`.
    pub fn new(
        autonomous: DMatrix<f64>,
        link: DMatrix<f64>,
        averaged: DMatrix<f64>,
        theta: f64,
    ) -> Result<Self> {
        let (na, nv) = (autonomous.nrows(), averaged.nrows());
        if autonomous.ncols() != na || averaged.ncols() != nv {
            return Err(Error::Coupling("transition matrices must be square".into()));
        }
        if link.nrows() != na || link.ncols() != nv {
            return Err(Error::DimensionMismatch {
                expected: na * nv,
                found: link.nrows() * link.ncols(),
            });
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "θ must be positive, got {theta}"
            )));
        }
        for (name, m) in [
            ("autonomous", &autonomous),
            ("averaged", &averaged),
            ("link", &link),
        ] {
            check_stochastic(name, m)?;
        }
        let residual = theta * max_abs_diff(&(&autonomous * &link), &(&link * &averaged));
        let tol = COUPLING_TOL * theta.max(1.0);
        if residual > tol {
            return Err(Error::Residual {
                check: "pair coupling intertwining".into(),
                value: residual,
                tol,
            });
        }

        let mut states = Vec::new();
        let mut lookup = vec![NONE; na * nv];
        for a in 0..na {
            for v in 0..nv {
                if link[(a, v)] > 0.0 {
                    lookup[a * nv + v] = states.len();
                    states.push((a, v));
                }
            }
        }

        let mut rows = Vec::with_capacity(states.len());
        for &(a, v) in &states {
            let mut row = Vec::new();
            for vn in 0..nv {
                let pv = averaged[(v, vn)];
                if pv <= 0.0 {
                    continue;
                }
                let den: f64 = (0..na).map(|an| autonomous[(a, an)] * link[(an, vn)]).sum();
                if !(den > 0.0) {
                    return Err(Error::Coupling(format!(
                        "conditional update from ({a}, {v}) to averaged state {vn} has no mass"
                    )));
                }
                for an in 0..na {
                    let t = autonomous[(a, an)] * link[(an, vn)];
                    if t > 0.0 {
                        row.push((lookup[an * nv + vn], pv * (t / den)));
                    }
                }
            }
            rows.push(row);
        }

        let jumps = rows
            .iter()
            .enumerate()
            .map(|(s, row)| {
                let mut targets = Vec::new();
                let mut cumulative = Vec::new();
                let mut acc = 0.0;
                for &(t, p) in row {
                    if t != s {
                        acc += p;
                        targets.push(t);
                        cumulative.push(acc);
                    }
                }
                for c in &mut cumulative {
                    *c /= acc;
                }
                if let Some(last) = cumulative.last_mut() {
                    *last = 1.0;
                }
                JumpTable {
                    rate: theta * acc,
                    targets,
                    cumulative,
                }
            })
            .collect();

        Ok(PairCoupling {
            theta,
            autonomous,
            averaged,
            link,
            states,
            lookup,
            rows,
            jumps,
            residual,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `θ ‖P K - K P'‖_max`, i.e. the generator-level intertwining residual.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn autonomous(&self) -> &DMatrix<f64> {
        &self.autonomous
    }

    pub fn averaged(&self) -> &DMatrix<f64> {
        &self.averaged
    }

    pub fn link(&self) -> &DMatrix<f64> {
        &self.link
    }

    /// Pairs `(a, v)` with `K(a, v) > 0`, ordered by `a` then `v`.
    pub fn states(&self) -> &[(usize, usize)] {
        &self.states
    }

    pub fn index_of(&self, a: usize, v: usize) -> Option<usize> {
        let nv = self.averaged.nrows();
        if a >= self.autonomous.nrows() || v >= nv {
            return None;
        }
        match self.lookup[a * nv + v] {
            NONE => None,
            i => Some(i),
        }
    }

    /// Sparse rows of `P̂`.
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// `P̂` as a dense matrix over the pair space.
    pub fn joint_matrix(&self) -> DMatrix<f64> {
        let n = self.states.len();
        let mut m = DMatrix::zeros(n, n);
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                m[(s, t)] += p;
            }
        }
        m
    }

    /// `Ĝ = θ (P̂ - I)`.
    pub fn joint_generator(&self) -> DMatrix<f64> {
        let n = self.states.len();
        (self.joint_matrix() - DMatrix::identity(n, n)) * self.theta
    }

    /// Copy whose joint rows `i` and `j` are exchanged; a deliberately wrong
    /// update rule for sensitivity checks of [`verify_pair_coupling`].
    pub fn with_rows_swapped(&self, i: usize, j: usize) -> Self {
        let mut c = self.clone();
        c.rows.swap(i, j);
        c.jumps.swap(i, j);
        c
    }

    /// Next state after one jump (self-loops excluded) and the holding rate.
    fn jump<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Option<(usize, f64)> {
        let table = &self.jumps[s];
        if table.targets.is_empty() || table.rate <= 0.0 {
            return None;
        }
        let u: f64 = rng.random();
        Some((table.sample(u), table.rate))
    }
}

fn check_stochastic(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for (x, row) in m.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Coupling(format!(
                "{name} matrix row {x} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Pair coupling of two generators intertwined by `K`, with
/// `θ = 1.1 max(exit rates)`.
pub fn build_pair_coupling(
    autonomous: &DMatrix<f64>,
    k: &MarkovKernel,
    averaged: &DMatrix<f64>,
) -> Result<PairCoupling> {
    let theta = UNIFORMIZATION_FACTOR * max_exit_rate(autonomous).max(max_exit_rate(averaged));
    let theta = if theta > 0.0 { theta } else { 1.0 };
    PairCoupling::new(
        uniformized(autonomous, theta),
        k.matrix().clone(),
        uniformized(averaged, theta),
        theta,
    )
}

/// Deviations found by exact propagation of the joint law.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PairCouplingReport {
    pub steps: usize,
    /// Autonomous marginal of the joint law against `δ_0 P^k`.
    pub marginal: f64,
    /// `J_k(a, v) / Σ_v J_k(a, v)` against `K(a, v)`.
    pub conditional: f64,
    /// `Σ_v K(a, v) P̂((a, v), (ã, ṽ))` against `P(a, ã) K(ã, ṽ)`, which
    /// carries the conditional law along every autonomous history.
    pub filter: f64,
    /// `Σ_ã P̂((a, v), (ã, ṽ))` against `P'(v, ṽ)`.
    pub averaged: f64,
}

impl PairCouplingReport {
    pub fn max_deviation(&self) -> f64 {
        self.marginal
            .max(self.conditional)
            .max(self.filter)
            .max(self.averaged)
    }
}

/// Propagates the joint law from autonomous state 0 with the averaged state
/// drawn from `K(0, ·)` for `1..=horizon_steps` steps and compares it with
/// the contract entrywise.
pub fn verify_pair_coupling(pc: &PairCoupling, horizon_steps: usize) -> PairCouplingReport {
    let (na, nv) = (pc.autonomous.nrows(), pc.averaged.nrows());
    let mut report = PairCouplingReport {
        steps: horizon_steps,
        ..Default::default()
    };

    // one-step identities
    for a in 0..na {
        let mut acc = vec![0.0; na * nv];
        for v in 0..nv {
            if let Some(s) = pc.index_of(a, v) {
                for &(t, p) in &pc.rows[s] {
                    let (an, vn) = pc.states[t];
                    acc[an * nv + vn] += pc.link[(a, v)] * p;
                }
            }
        }
        for an in 0..na {
            for vn in 0..nv {
                let target = pc.autonomous[(a, an)] * pc.link[(an, vn)];
                report.filter = report.filter.max((acc[an * nv + vn] - target).abs());
            }
        }
    }
    for (s, row) in pc.rows.iter().enumerate() {
        let v = pc.states[s].1;
        let mut acc = vec![0.0; nv];
        for &(t, p) in row {
            acc[pc.states[t].1] += p;
        }
        for vn in 0..nv {
            report.averaged = report.averaged.max((acc[vn] - pc.averaged[(v, vn)]).abs());
        }
    }

    // k-step propagation
    let mut joint = vec![0.0; pc.states.len()];
    for v in 0..nv {
        if let Some(s) = pc.index_of(0, v) {
            joint[s] = pc.link[(0, v)];
        }
    }
    let mut marginal = vec![0.0; na];
    marginal[0] = 1.0;
    for _ in 0..horizon_steps {
        let mut next = vec![0.0; pc.states.len()];
        for (s, row) in pc.rows.iter().enumerate() {
            if joint[s] != 0.0 {
                for &(t, p) in row {
                    next[t] += joint[s] * p;
                }
            }
        }
        joint = next;
        let mut next = vec![0.0; na];
        for a in 0..na {
            if marginal[a] != 0.0 {
                for an in 0..na {
                    next[an] += marginal[a] * pc.autonomous[(a, an)];
                }
            }
        }
        marginal = next;

        let mut from_joint = vec![0.0; na];
        for (s, &(a, _)) in pc.states.iter().enumerate() {
            from_joint[a] += joint[s];
        }
        for a in 0..na {
            report.marginal = report.marginal.max((from_joint[a] - marginal[a]).abs());
            let m = from_joint[a];
            if m > f64::MIN_POSITIVE {
                for v in 0..nv {
                    let j = pc.index_of(a, v).map_or(0.0, |s| joint[s]);
                    report.conditional = report.conditional.max((j / m - pc.link[(a, v)]).abs());
                }
            }
        }
    }
    report
}

/// `(X⁺, X)` coupled through `K⁺`, and that pair coupled with `X⁻` through
/// `L((x⁺, x), z) = K⁻(x, z)`.
#[derive(Debug, Clone)]
pub struct TripleCoupling {
    pub spec: BirthDeathSpec,
    pub plus: IntertwiningChain,
    pub minus: IntertwiningChain,
    pub level1: PairCoupling,
    pub level2: PairCoupling,
    /// `‖Ĝ L - L G⁻‖_max` on the first-level pair space.
    pub level2_residual: f64,
}

/// Builds both coupling levels with a single `θ = 1.1 max` exit rate over
/// `G`, `G⁺` and `G⁻`.
pub fn build_triple_coupling(
    spec: &BirthDeathSpec,
    plus: &IntertwiningChain,
    minus: &IntertwiningChain,
) -> Result<TripleCoupling> {
    if plus.side != Side::Plus || minus.side != Side::Minus {
        return Err(Error::Coupling(
            "expected a plus chain and a minus chain".into(),
        ));
    }
    if &plus.spec != spec || &minus.spec != spec {
        return Err(Error::Coupling(
            "chains were built from a different spec".into(),
        ));
    }
    let g = spec.dense_generator();
    let g_plus = plus.pure_birth.dense_generator();
    let g_minus = minus.pure_birth.dense_generator();
    let theta = UNIFORMIZATION_FACTOR
        * max_exit_rate(&g)
            .max(max_exit_rate(&g_plus))
            .max(max_exit_rate(&g_minus));

    let level1 = PairCoupling::new(
        uniformized(&g_plus, theta),
        plus.composed.matrix().clone(),
        uniformized(&g, theta),
        theta,
    )?;

    let n = spec.dim();
    let pairs = level1.states().len();
    let link = DMatrix::from_fn(pairs, n, |s, z| {
        let (_, x) = level1.states()[s];
        minus.composed.get(x, z)
    });
    let g_hat = level1.joint_generator();
    let level2_residual = max_abs_diff(&(&g_hat * &link), &(&link * &g_minus));
    let tol = COUPLING_TOL * theta.max(1.0);
    if level2_residual > tol {
        return Err(Error::Residual {
            check: "second-level intertwining ĜL = LG⁻".into(),
            value: level2_residual,
            tol,
        });
    }
    let level2 = PairCoupling::new(
        level1.joint_matrix(),
        link,
        uniformized(&g_minus, theta),
        theta,
    )?;

    Ok(TripleCoupling {
        spec: spec.clone(),
        plus: plus.clone(),
        minus: minus.clone(),
        level1,
        level2,
        level2_residual,
    })
}

impl TripleCoupling {
    pub fn theta(&self) -> f64 {
        self.level1.theta()
    }

    /// `(x⁻, x, x⁺)` of a second-level state.
    pub fn triple(&self, s2: usize) -> [usize; 3] {
        let (s1, z) = self.level2.states()[s2];
        let (xp, x) = self.level1.states()[s1];
        [z, x, xp]
    }

    fn start(&self) -> Result<usize> {
        let s1 = self
            .level1
            .index_of(0, 0)
            .ok_or_else(|| Error::Coupling("(0, 0) is not in the pair space".into()))?;
        self.level2
            .index_of(s1, 0)
            .ok_or_else(|| Error::Coupling("(0, 0, 0) is not in the triple space".into()))
    }

    /// Passage-time law shared by the three coordinates.
    pub fn passage_law(&self) -> Result<HypoexponentialLaw> {
        HypoexponentialLaw::new(self.minus.rates().to_vec())
    }
}

/// A state change of the triple at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEvent {
    pub time: f64,
    /// `[x⁻, x, x⁺]`.
    pub state: [usize; 3],
}

/// One simulated triple from `(0, 0, 0)` until all coordinates reach `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPath {
    pub index: usize,
    /// Starts with `(0, [0, 0, 0])`; one entry per state change.
    pub events: Vec<PathEvent>,
    pub tau: f64,
}

/// Path-wise invariant violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PathViolations {
    pub sandwich: usize,
    pub simultaneous_arrival: usize,
    pub monotonicity: usize,
}

impl PathViolations {
    pub fn total(&self) -> usize {
        self.sandwich + self.simultaneous_arrival + self.monotonicity
    }
}

impl CoupledPath {
    /// `[x⁻, x, x⁺]` at time `t`.
    pub fn state_at(&self, t: f64) -> [usize; 3] {
        let k = self.events.partition_point(|e| e.time <= t);
        self.events[k.saturating_sub(1)].state
    }

    /// Counts events breaking `x⁻ ≤ x ≤ x⁺`, the monotonicity of `x⁻` and
    /// `x⁺`, and the shared arrival at `top`.
    pub fn violations(&self, top: usize) -> PathViolations {
        let mut v = PathViolations::default();
        let mut previous: Option<[usize; 3]> = None;
        for e in &self.events {
            let [zm, x, zp] = e.state;
            if !(zm <= x && x <= zp) {
                v.sandwich += 1;
            }
            let any_top = e.state.contains(&top);
            let all_top = e.state.iter().all(|&c| c == top);
            if any_top && !all_top {
                v.simultaneous_arrival += 1;
            }
            if let Some([pm, _, pp]) = previous {
                if zm < pm || zp < pp {
                    v.monotonicity += 1;
                }
            }
            previous = Some(e.state);
        }
        let arrived = self
            .events
            .last()
            .is_some_and(|e| e.state == [top; 3] && e.time == self.tau);
        let first_top = self.events.iter().position(|e| e.state.contains(&top));
        if !arrived || first_top != Some(self.events.len() - 1) {
            v.simultaneous_arrival += 1;
        }
        v
    }
}

fn path_error(path: &CoupledPath, invariant: &'static str) -> Error {
    Error::PathInvariant {
        index: path.index,
        invariant,
        path: serde_json::to_string(path).unwrap_or_default(),
    }
}

/// Random stream of path `index`: ChaCha8 seeded with `seed`, stream `index`.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates path `index`. Self-loops of the uniformized joint chain are
/// merged: a run of them followed by a jump takes an `Exp(θ(1 - P̂(s, s)))`
/// time, which is the sum of the `Exp(θ)` holding times of the run.
pub fn simulate_path(coupling: &TripleCoupling, seed: u64, index: usize) -> Result<CoupledPath> {
    let top = coupling.spec.top();
    let mut rng = path_rng(seed, index);
    let mut s = coupling.start()?;
    let mut t = 0.0;
    let mut path = CoupledPath {
        index,
        events: vec![PathEvent {
            time: 0.0,
            state: coupling.triple(s),
        }],
        tau: f64::NAN,
    };
    let mut jumps = 0u64;
    loop {
        let current = coupling.triple(s);
        if current[2] == top {
            break;
        }
        let Some((next, rate)) = coupling.level2.jump(s, &mut rng) else {
            return Err(path_error(&path, "progress (absorbed below the top)"));
        };
        t += Exp::new(rate)
            .map_err(|e| Error::Coupling(e.to_string()))?
            .sample(&mut rng);
        s = next;
        let state = coupling.triple(s);
        path.events.push(PathEvent { time: t, state });
        let [zm, x, zp] = state;
        if !(zm <= x && x <= zp) {
            return Err(path_error(&path, "sandwich x⁻ ≤ x ≤ x⁺"));
        }
        if zm < current[0] || zp < current[2] {
            return Err(path_error(&path, "monotone pure-birth coordinates"));
        }
        if state.contains(&top) && state != [top; 3] {
            return Err(path_error(&path, "simultaneous arrival"));
        }
        jumps += 1;
        if jumps >= MAX_JUMPS {
            return Err(path_error(&path, "jump budget"));
        }
    }
    path.tau = t;
    Ok(path)
}

/// `n_paths` independent paths, simulated in parallel; path `i` uses stream
/// `i` of the root seed, so the result does not depend on scheduling.
pub fn simulate_triple(
    coupling: &TripleCoupling,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<CoupledPath>> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_path(coupling, seed, i))
        .collect()
}

/// χ² test of one conditional or marginal law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawTest {
    /// What is conditioned on, e.g. `x⁺ = 2`.
    pub label: String,
    #[serde(flatten)]
    pub result: ChiSquareResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalSummary {
    #[serde(flatten)]
    pub moments: MomentSummary,
    /// `Σ 1/λ_i`.
    pub expected_mean: f64,
    /// `Σ 1/λ_i²`.
    pub expected_variance: f64,
    pub mean_z: f64,
    pub variance_z: f64,
}

/// Summary statistics of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub theta: f64,
    pub arrival: ArrivalSummary,
    pub ks: KsResult,
    pub violations: PathViolations,
    /// Times at which conditional and marginal laws are sampled.
    pub probe_times: Vec<f64>,
    /// Law of `X` given `X⁺ = x⁺` against `K⁺(x⁺, ·)`.
    pub plus_conditionals: Vec<LawTest>,
    /// Law of `X⁻` given `(X⁺, X) = (x⁺, x)` against `K⁻(x, ·)`.
    pub minus_conditionals: Vec<LawTest>,
    /// Laws of `X⁻`, `X` and `X⁺` against `e^{tG⁻}(0, ·)`, `e^{tG}(0, ·)`
    /// and `e^{tG⁺}(0, ·)`.
    pub marginals: Vec<LawTest>,
    /// Per-test level after Bonferroni correction.
    pub alpha_per_test: f64,
    pub chi_square_passed: bool,
}

impl EnsembleReport {
    /// All hard and statistical checks at their documented levels.
    pub fn passed(&self) -> bool {
        self.violations.total() == 0
            && self.ks.passed
            && self.arrival.mean_z.abs() <= 4.0
            && self.arrival.variance_z.abs() <= 4.0
            && self.chi_square_passed
    }
}

/// Arrival-time moments, KS against the closed form, invariant counts and
/// the χ² battery at the probe times `f Σ 1/λ_i`, `f` in [`PROBE_FRACTIONS`].
pub fn ensemble_report(coupling: &TripleCoupling, paths: &[CoupledPath]) -> Result<EnsembleReport> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let top = coupling.spec.top();
    let law = coupling.passage_law()?;
    let taus: Vec<f64> = paths.iter().map(|p| p.tau).collect();
    let moments = if taus.len() >= 2 {
        moment_summary(&taus)?
    } else {
        MomentSummary {
            n: 1,
            mean: taus[0],
            variance: 0.0,
            mean_se: f64::INFINITY,
            variance_se: f64::INFINITY,
        }
    };
    let arrival = ArrivalSummary {
        expected_mean: law.mean(),
        expected_variance: law.variance(),
        mean_z: (moments.mean - law.mean()) / moments.mean_se,
        variance_z: (moments.variance - law.variance()) / moments.variance_se,
        moments,
    };
    let ks = ks_test(&taus, |t| law.cdf(t))?;

    let mut violations = PathViolations::default();
    for p in paths {
        let v = p.violations(top);
        violations.sandwich += v.sandwich;
        violations.simultaneous_arrival += v.simultaneous_arrival;
        violations.monotonicity += v.monotonicity;
    }

    let dim = top + 1;
    let probe_times: Vec<f64> = PROBE_FRACTIONS.iter().map(|f| f * law.mean()).collect();
    let mut plus_conditionals = Vec::new();
    let mut minus_conditionals = Vec::new();
    let mut marginals = Vec::new();
    let coordinates = [
        ("x-", &coupling.minus.pure_birth),
        ("x", &coupling.spec),
        ("x+", &coupling.plus.pure_birth),
    ];
    for &t in &probe_times {
        let mut plus_counts = vec![vec![0u64; dim]; dim];
        let mut minus_counts = vec![vec![0u64; dim]; dim * dim];
        let mut marginal_counts = vec![vec![0u64; dim]; 3];
        for p in paths {
            let state = p.state_at(t);
            let [zm, x, xp] = state;
            plus_counts[xp][x] += 1;
            minus_counts[xp * dim + x][zm] += 1;
            for (c, &v) in state.iter().enumerate() {
                marginal_counts[c][v] += 1;
            }
        }
        for (xp, counts) in plus_counts.iter().enumerate() {
            if counts.iter().sum::<u64>() > 0 {
                plus_conditionals.push(LawTest {
                    label: format!("t = {t}, x+ = {xp}"),
                    result: chi_square_test(counts, &coupling.plus.composed.row(xp))?,
                });
            }
        }
        for (k, counts) in minus_counts.iter().enumerate() {
            if counts.iter().sum::<u64>() > 0 {
                let (xp, x) = (k / dim, k % dim);
                minus_conditionals.push(LawTest {
                    label: format!("t = {t}, (x+, x) = ({xp}, {x})"),
                    result: chi_square_test(counts, &coupling.minus.composed.row(x))?,
                });
            }
        }
        for ((name, spec), counts) in coordinates.iter().zip(&marginal_counts) {
            marginals.push(LawTest {
                label: format!("t = {t}, {name}"),
                result: chi_square_test(counts, &transition_probability(spec, 0, t)?)?,
            });
        }
    }
    let tests = plus_conditionals.len() + minus_conditionals.len() + marginals.len();
    let alpha_per_test = CHI_SQUARE_ALPHA / tests as f64;
    let chi_square_passed = plus_conditionals
        .iter()
        .chain(&minus_conditionals)
        .chain(&marginals)
        .all(|t| t.result.passes(alpha_per_test));

    Ok(EnsembleReport {
        n_paths: paths.len(),
        theta: coupling.theta(),
        arrival,
        ks,
        violations,
        probe_times,
        plus_conditionals,
        minus_conditionals,
        marginals,
        alpha_per_test,
        chi_square_passed,
    })
}
