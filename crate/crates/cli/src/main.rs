//! `intertwine`: spectra, intertwining kernels, passage-time tables and
//! coupled simulation for stopped birth-and-death chains.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Default residual tolerance for `verify`.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "intertwine", version, about)]
pub struct RunConfig {
    #[command(flatten)]
    pub input: SpecInput,

    /// Residual tolerance used by `verify`.
    #[arg(long, global = true, env = "INTERTWINE_TOL", default_value_t = DEFAULT_TOL,
          value_parser = positive_f64)]
    pub tol: f64,

    /// Write the JSON result here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    /// Indent the JSON output.
    #[arg(long, global = true)]
    pub pretty: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SpecInput {
    /// Rate specification: {"N": n, "b": [b_1..b_N], "d": [d_1..d_N]}.
    #[arg(long, global = true, conflicts_with = "random_spec")]
    pub spec: Option<PathBuf>,

    /// Random stopped chain with rates log-uniform in [0.1, 10].
    #[arg(long, global = true, num_args = 2, value_names = ["N", "SEED"])]
    pub random_spec: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues λ_1 < ... < λ_N of the stopped generator.
    Spectrum {
        /// Add relative residuals of the trace and determinant identities.
        #[arg(long)]
        check_identities: bool,
    },
    /// Stage kernels, composed kernels, pure-birth rates and residuals.
    Kernels {
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
    },
    /// Full invariant battery; exits with status 1 if any check fails.
    Verify {
        /// Re-check the output of `kernels` instead of building from a spec.
        #[arg(long, conflicts_with_all = ["spec", "random_spec"])]
        artifacts: Option<PathBuf>,
    },
    /// Passage-time CDF to N from a start state: closed form against
    /// the transition-matrix oracle.
    Passage {
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Grid `start:stop:count`.
        #[arg(long, value_parser = parse_grid)]
        t_grid: GridArg,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulate coupled triples and report the ensemble statistics.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dump every path as one JSON line.
        #[arg(long)]
        record_paths: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Plus,
    Minus,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

fn parse_grid(s: &str) -> Result<GridArg, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err("expected start:stop:count".into());
    };
    let float = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let count = n
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("{n:?}: {e}"))?;
    if count < 2 {
        return Err("grid count must be at least 2".into());
    }
    Ok(GridArg {
        start: float(a)?,
        stop: float(b)?,
        count,
    })
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("tolerance must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

/// Failure classes and their exit statuses.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inadmissible spec: status 2.
    Spec(String),
    /// A check or construction failed: status 1.
    Check(String),
    /// Reading or writing a file failed: status 3.
    Io(String),
}

impl CliError {
    fn status(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Spec(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Spec(m) => write!(f, "malformed spec: {m}"),
            CliError::Check(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<intertwine_core::Error> for CliError {
    fn from(e: intertwine_core::Error) -> Self {
        CliError::Check(e.to_string())
    }
}

fn main() -> ExitCode {
    let config = RunConfig::parse();
    match commands::run(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("intertwine: {e}");
            ExitCode::from(e.status())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:2.5:11").unwrap();
        assert_eq!((g.start, g.stop, g.count), (0.0, 2.5, 11));
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:1").is_err());
        assert!(parse_grid("a:1:3").is_err());
    }

    #[test]
    fn tolerance_must_be_positive() {
        assert_eq!(positive_f64("1e-8"), Ok(1e-8));
        assert!(positive_f64("0").is_err());
        assert!(positive_f64("nan").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        RunConfig::command().debug_assert();
    }
}
