//! Command-line front end: reads a run configuration, dispatches one
//! subcommand and writes its tables.
//!
//! Exit status: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical failures and 4 when conditioning on the requested lineage count
//! is infeasible. No output file is written unless the command succeeds.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{Config, ConfigError, Setup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

/// Smallest replicate count accepted by the oracle commands.
const MIN_ORACLE_REPLICATES: u64 = 1000;

#[derive(Debug, Parser)]
#[command(name = "quadri", version, about = "Quadri-allelic spectrum for three diverged populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured replicate count.
    #[arg(long, global = true)]
    replicates: Option<u64>,

    /// Override the relative quadrature tolerance.
    #[arg(long, global = true, value_name = "REL")]
    tolerance: Option<f64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// P^{N,M}(t_d) for every pairwise model.
    LineageProb,
    /// Conditional interval moments E[T_i] and E[T_j T_k].
    Times,
    /// Per-model probabilities, weights and the combined value (JSON).
    Spectrum,
    /// Monte Carlo estimates of the configuration spectrum.
    Simulate {
        /// Also write one CSV row per replicate.
        #[arg(long)]
        replicate_csv: bool,
    },
    /// Analytic values against Monte Carlo estimates, with z-scores.
    Compare,
}

enum Failure {
    Config(ConfigError),
    Core(quadri_core::Error),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => EXIT_CONFIG,
            Failure::Core(e) => match e.root() {
                quadri_core::Error::InfeasibleConditioning { .. } | quadri_core::Error::ConditioningImpossible { .. } => {
                    EXIT_INFEASIBLE
                }
                _ => EXIT_NUMERICAL,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(e) => format!("configuration error: {e}"),
            Failure::Core(e) => format!("error: {e}"),
            Failure::Io(m) => format!("error: {m}"),
        }
    }
}

impl From<quadri_core::Error> for Failure {
    fn from(e: quadri_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn load(cli: &Cli) -> Result<Setup, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(ConfigError::Io("--config <PATH> is required".into())))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(ConfigError::Io(format!("cannot read {}: {e}", path.display()))))?;
    let mut cfg = Config::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(r) = cli.replicates {
        cfg.replicates = r;
    }
    if let Some(t) = cli.tolerance {
        cfg.analysis.tolerance = t;
    }
    let setup = cfg.setup()?;
    let oracle = matches!(cli.command, Command::Simulate { .. } | Command::Compare);
    if oracle && setup.replicates < MIN_ORACLE_REPLICATES {
        return Err(Failure::Config(ConfigError::Invalid {
            path: "replicates".into(),
            message: format!("oracle commands need at least {MIN_ORACLE_REPLICATES}, got {}", setup.replicates),
        }));
    }
    Ok(setup)
}

fn execute(cli: &Cli, setup: &Setup) -> Result<commands::Files, Failure> {
    let run = || -> Result<commands::Files, Failure> {
        Ok(match cli.command {
            Command::LineageProb => commands::lineage_prob(setup)?,
            Command::Times => commands::times(setup)?,
            Command::Spectrum => commands::spectrum(setup)?,
            Command::Simulate { replicate_csv } => commands::simulate(setup, replicate_csv)?,
            Command::Compare => commands::compare(setup)?,
        })
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Io(format!("cannot start {n} worker threads: {e}")))?
            .install(run),
        None => run(),
    }
}

fn write_all(dir: &PathBuf, files: &commands::Files) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Parse `argv` (program name first), run the command and return the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = load(&cli).and_then(|setup| execute(&cli, &setup)).and_then(|files| write_all(&cli.out, &files));
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{}", f.message());
            f.code()
        }
    }
}
