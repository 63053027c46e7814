//! Command-line front end: `run`, `verify`, `fit`, `report`.

pub mod commands;
pub mod config;
pub mod error;
pub mod series;
pub mod snapshot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Common, Suite};
use error::{CliError, EXIT_CONFIG};

pub const THREADS_ENV: &str = "KSFLOW_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ksflow", version, about = "Finite-rank Kohn-Sham half-density experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Samples per randomized suite.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Allow interactions outside the admissible class.
    #[arg(long, global = true)]
    pub exploratory: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evolve the configured initial data and record monitors.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, value_enum, default_value = "identities")]
        suite: SuiteArg,
        /// Also check a stored snapshot.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit t^-nu to one column of a series.
    Fit {
        /// Series CSV with a `t` column.
        series: PathBuf,
        #[arg(long, default_value = "gamma_inf")]
        column: String,
        #[arg(long, default_value_t = 5.0)]
        t0: f64,
        #[arg(long, default_value_t = 40.0)]
        t1: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Summarize a run directory.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteArg {
    Identities,
    Inequalities,
    DynamicsOracles,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Identities => Suite::Identities,
            SuiteArg::Inequalities => Suite::Inequalities,
            SuiteArg::DynamicsOracles => Suite::DynamicsOracles,
        }
    }
}

impl From<&CommonArgs> for Common {
    fn from(a: &CommonArgs) -> Self {
        Common {
            config: a.config.clone(),
            seed: a.seed,
            samples: a.samples,
            out: a.out.clone(),
            exploratory: a.exploratory,
        }
    }
}

/// Reads `KSFLOW_THREADS`; unset or empty means no cap.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        _ => Ok(None),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let cap = thread_cap()?;
    #[cfg(feature = "parallel")]
    if let Some(n) = cap {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cap;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Run { common } => commands::cmd_run(&common.into()),
        Command::Verify { suite, snapshot, common } => commands::cmd_verify(&common.into(), (*suite).into(), snapshot.as_deref()),
        Command::Fit { series, column, t0, t1, common } => commands::cmd_fit(&common.into(), series, column, *t0, *t1),
        Command::Report { common } => commands::cmd_report(&common.into()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ksflow: {e}");
            e.code
        }
    }
}
