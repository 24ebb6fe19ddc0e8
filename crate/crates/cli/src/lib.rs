//! Command-line front end: config resolution, command dispatch and artifact output.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Worker thread count when `--threads` is not given.
pub const THREADS_ENV: &str = "DIVKERN_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{name}: {0}", name = .0.name())]
    Core(divkern_core::Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    /// Input problems reported by the core become validation errors.
    pub fn from_core(e: divkern_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(format!("{}: {e}", e.name()))
        } else {
            CliError::Core(e)
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "ValidationError",
            CliError::Core(e) => e.name(),
            CliError::Io(_) => "IoError",
        }
    }
}

impl From<divkern_core::Error> for CliError {
    fn from(e: divkern_core::Error) -> Self {
        CliError::from_core(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    ExtractAb,
    VerifyDivision,
    Continue,
    Poles,
    Blaschke,
    KernelEval,
    SampleDpp,
    GapProb,
    TraceReport,
    Stability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ExtractAb => "extract-ab",
            Command::VerifyDivision => "verify-division",
            Command::Continue => "continue",
            Command::Poles => "poles",
            Command::Blaschke => "blaschke",
            Command::KernelEval => "kernel-eval",
            Command::SampleDpp => "sample-dpp",
            Command::GapProb => "gap-prob",
            Command::TraceReport => "trace-report",
            Command::Stability => "stability",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "divkern", version, about = "Division operators, integrable kernels and projection DPPs")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted override, e.g. `grid.n=300` or `params.window=[-1,1]`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to DIVKERN_THREADS, then to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim().parse::<usize>().map_err(|_| CliError::Validation(format!("{THREADS_ENV}={v} is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Validation("thread count must be positive".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the tool and returns the process exit status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("divkern: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration, runs the command and writes its artifacts.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    configure_threads(cli.threads)?;
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = config::resolve(&text, &cli.set)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let header = output::Header::new(cli.command, &cfg);
    match commands::execute(cli.command, &cfg) {
        Ok(artifacts) => output::write_all(&cfg.out, &header, &artifacts),
        Err(e @ CliError::Core(_)) => {
            output::write_error(&cfg.out, &header, &e)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}
