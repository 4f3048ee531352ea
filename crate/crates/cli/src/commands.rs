//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use intertwine_core::random::random_spec;
use intertwine_core::*;
use serde::{Deserialize, Serialize};

use crate::{CliError, Command, GridArg, RunConfig, SideArg, SpecInput};

/// Relative agreement required between the two pure-birth spectra and the
/// oracle.
const SPECTRUM_TOL: f64 = 1e-8;
/// Smallest admissible relative gap between consecutive eigenvalues.
const GAP_TOL: f64 = 1e-10;
const KERNEL_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-10;
const CDF_TOL: f64 = 1e-8;
const VERIFY_GRID_POINTS: usize = 100;
const COUPLING_STEPS: usize = 50;

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    match &config.command {
        Command::Spectrum { check_identities } => {
            spectrum(config, &load_spec(&config.input)?, *check_identities)
        }
        Command::Kernels { side } => kernels(config, &load_spec(&config.input)?, *side),
        Command::Verify {
            artifacts: Some(path),
        } => verify_artifacts(config, path),
        Command::Verify { artifacts: None } => verify(config, &load_spec(&config.input)?),
        Command::Passage { start, t_grid, csv } => passage(
            config,
            &load_spec(&config.input)?,
            *start,
            *t_grid,
            csv.as_deref(),
        ),
        Command::Simulate {
            paths,
            seed,
            record_paths,
        } => simulate(
            config,
            &load_spec(&config.input)?,
            *paths as usize,
            *seed,
            record_paths.as_deref(),
        ),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_spec(input: &SpecInput) -> Result<BirthDeathSpec, CliError> {
    let spec = match (&input.spec, &input.random_spec) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str::<BirthDeathSpec>(&text)
                .map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))?
        }
        (None, Some(args)) => {
            let (n, seed) = (args[0] as usize, args[1]);
            random_spec(n, seed).map_err(|e| CliError::Spec(e.to_string()))?
        }
        (None, None) => {
            return Err(CliError::Spec(
                "no chain given; pass --spec FILE or --random-spec N SEED".into(),
            ))
        }
    };
    spec.check_stopped()
        .map_err(|e| CliError::Spec(e.to_string()))?;
    Ok(spec)
}

fn emit<T: Serialize>(config: &RunConfig, value: &T) -> Result<(), CliError> {
    let mut text = if config.pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .map_err(|e| CliError::Check(format!("serialisation failed: {e}")))?;
    text.push('\n');
    match &config.output {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

#[derive(Serialize)]
struct SpectrumOutput {
    lambdas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identities: Option<spectral::IdentityResiduals>,
}

fn spectrum(config: &RunConfig, spec: &BirthDeathSpec, check: bool) -> Result<(), CliError> {
    let s = spectrum_oracle(spec)?;
    let identities = check.then(|| s.identity_residuals(spec));
    emit(
        config,
        &SpectrumOutput {
            lambdas: s.lambdas,
            identities,
        },
    )
}

#[derive(Serialize)]
struct ChainOutput<'a> {
    #[serde(flatten)]
    chain: &'a IntertwiningChain,
    rates: &'a [f64],
    report: ChainReport,
}

#[derive(Serialize)]
struct KernelsOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    plus: Option<ChainOutput<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    minus: Option<ChainOutput<'a>>,
}

/// What `verify --artifacts` reads back from `kernels`.
#[derive(Deserialize)]
struct KernelsInput {
    plus: Option<IntertwiningChain>,
    minus: Option<IntertwiningChain>,
}

fn chain_output(chain: &IntertwiningChain) -> Result<ChainOutput<'_>, CliError> {
    Ok(ChainOutput {
        chain,
        rates: chain.rates(),
        report: chain.report()?,
    })
}

fn kernels(config: &RunConfig, spec: &BirthDeathSpec, side: SideArg) -> Result<(), CliError> {
    let plus = match side {
        SideArg::Plus | SideArg::Both => Some(build_plus_chain(spec)?),
        SideArg::Minus => None,
    };
    let minus = match side {
        SideArg::Minus | SideArg::Both => Some(build_minus_chain(spec)?),
        SideArg::Plus => None,
    };
    emit(
        config,
        &KernelsOutput {
            plus: plus.as_ref().map(chain_output).transpose()?,
            minus: minus.as_ref().map(chain_output).transpose()?,
        },
    )
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Bound {
    /// Passes when `value <= tol`.
    Max,
    /// Passes when `value > tol`.
    Min,
}

#[derive(Debug, Clone, Serialize)]
struct Check {
    name: String,
    value: f64,
    bound: Bound,
    tol: f64,
    passed: bool,
}

#[derive(Default, Serialize)]
struct Battery {
    checks: Vec<Check>,
    passed: bool,
}

impl Battery {
    fn at_most(&mut self, name: impl Into<String>, value: f64, tol: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            bound: Bound::Max,
            tol,
            passed: value <= tol,
        });
    }

    fn above(&mut self, name: impl Into<String>, value: f64, tol: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            bound: Bound::Min,
            tol,
            passed: value > tol,
        });
    }

    fn count(&mut self, name: impl Into<String>, violations: usize) {
        self.at_most(name, violations as f64, 0.0);
    }

    fn finish(mut self, config: &RunConfig) -> Result<(), CliError> {
        self.passed = self.checks.iter().all(|c| c.passed);
        emit(config, &self)?;
        let failed: Vec<&str> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Check(format!(
                "invariant check failed: {}",
                failed.join(", ")
            )))
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn check_chain(
    battery: &mut Battery,
    chain: &IntertwiningChain,
    oracle: &Spectrum,
    tol: f64,
) -> Result<(), CliError> {
    let side = chain.side;
    let report = chain.report()?;
    let stage = report.stage_residuals.iter().copied().fold(0.0, f64::max);
    battery.at_most(format!("{side}.stage_residual"), stage, tol);
    battery.at_most(
        format!("{side}.composed_residual"),
        report.composed_residual,
        tol,
    );
    battery.at_most(
        format!("{side}.kernel_structure"),
        report.kernel.worst(),
        KERNEL_TOL,
    );
    battery.count(format!("{side}.rate_order"), usize::from(!report.ordered));
    battery.count(
        format!("{side}.pure_birth"),
        usize::from(!report.pure_birth),
    );
    let linkage = chain
        .check_linkage()
        .map_err(|e| CliError::Check(format!("{side}.linkage: {e}")))?;
    battery.at_most(format!("{side}.linkage"), linkage, KERNEL_TOL);
    let n = chain.spec.top();
    let worst = (0..n)
        .map(|i| {
            let rate = match side {
                Side::Plus => chain.rates()[n - 1 - i],
                Side::Minus => chain.rates()[i],
            };
            relative(rate, oracle.lambdas[i])
        })
        .fold(0.0, f64::max);
    battery.at_most(format!("{side}.spectrum_agreement"), worst, SPECTRUM_TOL);
    Ok(())
}

fn check_spectrum(battery: &mut Battery, spec: &BirthDeathSpec, oracle: &Spectrum) {
    let id = oracle.identity_residuals(spec);
    battery.at_most("spectrum.trace_identity", id.trace, IDENTITY_TOL);
    battery.at_most(
        "spectrum.determinant_identity",
        id.determinant,
        IDENTITY_TOL,
    );
    if oracle.lambdas.len() > 1 {
        battery.above(
            "spectrum.min_relative_gap",
            oracle.min_relative_gap(),
            GAP_TOL,
        );
    }
}

fn verify(config: &RunConfig, spec: &BirthDeathSpec) -> Result<(), CliError> {
    let tol = config.tol;
    let mut battery = Battery::default();
    let oracle = spectrum_oracle(spec)?;
    check_spectrum(&mut battery, spec, &oracle);
    let plus = build_plus_chain(spec)?;
    let minus = build_minus_chain(spec)?;
    check_chain(&mut battery, &plus, &oracle, tol)?;
    check_chain(&mut battery, &minus, &oracle, tol)?;

    let n = spec.top();
    let law = HypoexponentialLaw::new(minus.rates().to_vec())?;
    let grid = TimeGrid::new(0.0, 4.0 * law.mean(), VERIFY_GRID_POINTS)?;
    let times = grid.points();
    let mut origin = 0.0f64;
    let mut starts = 0.0f64;
    for x in 0..=n {
        let mixture = mixture_passage_law(spec, &minus.composed, x)?;
        let rows = transition_probabilities_on_grid(spec, x, &grid)?;
        for (t, row) in times.iter().zip(&rows) {
            starts = starts.max((mixture.cdf(*t)? - row[n]).abs());
            if x == 0 {
                origin = origin.max((law.cdf(*t)? - row[n]).abs());
            }
        }
    }
    battery.at_most("passage.origin", origin, CDF_TOL);
    battery.at_most("passage.all_starts", starts, CDF_TOL);

    let coupling = build_triple_coupling(spec, &plus, &minus)?;
    battery.at_most(
        "coupling.second_level_residual",
        coupling.level2_residual,
        tol * coupling.theta().max(1.0),
    );
    let l1 = verify_pair_coupling(&coupling.level1, COUPLING_STEPS).max_deviation();
    let l2 = verify_pair_coupling(&coupling.level2, COUPLING_STEPS).max_deviation();
    battery.at_most("coupling.level1_conditional_law", l1, tol);
    battery.at_most("coupling.level2_conditional_law", l2, tol);
    battery.finish(config)
}

fn verify_artifacts(config: &RunConfig, path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let input: KernelsInput = serde_json::from_str(&text)
        .map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))?;
    let chains: Vec<&IntertwiningChain> = input.plus.iter().chain(&input.minus).collect();
    if chains.is_empty() {
        return Err(CliError::Spec(format!(
            "{}: no \"plus\" or \"minus\" chain",
            path.display()
        )));
    }
    let mut battery = Battery::default();
    if let (Some(p), Some(m)) = (&input.plus, &input.minus) {
        battery.count("artifacts.same_spec", usize::from(p.spec != m.spec));
    }
    let spec = &chains[0].spec;
    spec.check_stopped()
        .map_err(|e| CliError::Spec(e.to_string()))?;
    let oracle = spectrum_oracle(spec)?;
    check_spectrum(&mut battery, spec, &oracle);
    for chain in chains {
        check_chain(&mut battery, chain, &oracle, config.tol)?;
    }
    battery.finish(config)
}

#[derive(Serialize)]
struct PassageRow {
    t: f64,
    closed_form: f64,
    oracle: f64,
    diff: f64,
}

#[derive(Serialize)]
struct PassageOutput {
    start: usize,
    grid: TimeGrid,
    rates: Vec<f64>,
    weights: Vec<f64>,
    max_abs_diff: f64,
    rows: Vec<PassageRow>,
}

fn passage(
    config: &RunConfig,
    spec: &BirthDeathSpec,
    start: usize,
    grid: GridArg,
    csv_path: Option<&Path>,
) -> Result<(), CliError> {
    let grid = TimeGrid::new(grid.start, grid.stop, grid.count)?;
    let minus = build_minus_chain(spec)?;
    let law = mixture_passage_law(spec, &minus.composed, start)?;
    let oracle = transition_probabilities_on_grid(spec, start, &grid)?;
    let n = spec.top();
    let mut rows = Vec::with_capacity(grid.count);
    for (t, row) in grid.points().into_iter().zip(&oracle) {
        let closed_form = law.cdf(t)?;
        rows.push(PassageRow {
            t,
            closed_form,
            oracle: row[n],
            diff: closed_form - row[n],
        });
    }
    if let Some(path) = csv_path {
        write_csv(path, &rows)?;
    }
    emit(
        config,
        &PassageOutput {
            start,
            grid,
            rates: spectrum_oracle(spec)?.lambdas,
            weights: law.weights.clone(),
            max_abs_diff: rows.iter().map(|r| r.diff.abs()).fold(0.0, f64::max),
            rows,
        },
    )
}

fn write_csv(path: &Path, rows: &[PassageRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

#[derive(Serialize)]
struct SimulateOutput {
    seed: u64,
    spec: BirthDeathSpec,
    level2_residual: f64,
    passed: bool,
    report: EnsembleReport,
}

fn simulate(
    config: &RunConfig,
    spec: &BirthDeathSpec,
    n_paths: usize,
    seed: u64,
    record: Option<&Path>,
) -> Result<(), CliError> {
    let plus = build_plus_chain(spec)?;
    let minus = build_minus_chain(spec)?;
    let coupling = build_triple_coupling(spec, &plus, &minus)?;
    let paths = simulate_triple(&coupling, seed, n_paths)?;
    if let Some(path) = record {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &paths {
            serde_json::to_writer(&mut w, p).map_err(|e| io_error(path, e))?;
            w.write_all(b"\n").map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    let report = ensemble_report(&coupling, &paths)?;
    emit(
        config,
        &SimulateOutput {
            seed,
            spec: spec.clone(),
            level2_residual: coupling.level2_residual,
            passed: report.passed(),
            report,
        },
    )
}
