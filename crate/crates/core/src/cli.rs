//! Command-line front end. Exit codes: 0 success, 2 configuration or input
//! error, 3 numerical failure, 4 acceptance failure (`verify` only).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{Config, Overrides};
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "eivreg", version, about = "Restricted estimation and ADR analysis for multivariate regression with measurement errors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; the bundled desk-scale plan when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `simulation.reps`.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Overrides `n`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate every estimator from observed Z and X.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Response matrix CSV (n x q).
        #[arg(long)]
        z: PathBuf,
        /// Observed covariate matrix CSV (n x p).
        #[arg(long)]
        x: PathBuf,
    },
    /// Monte Carlo replications compared with the limit law.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Joint limit law of the configured estimators.
    Law {
        #[command(flatten)]
        common: Common,
    },
    /// ADR decomposition and dominance report.
    Adr {
        #[command(flatten)]
        common: Common,
    },
    /// Relative efficiency along a direction of the local alternative.
    Efficiency {
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Estimate { common, .. }
            | Command::Simulate { common }
            | Command::Law { common }
            | Command::Adr { common }
            | Command::Efficiency { common }
            | Command::Verify { common } => common,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn load(common: &Common) -> Result<Config, Error> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default_desk(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        reps: common.reps,
        n: common.n,
    })?;
    Ok(cfg)
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let common = cli.command.common();
    let result = load(common).and_then(|cfg| {
        let w = common.workers;
        if w == Some(0) {
            return Err(Error::Config("--workers must be positive".into()));
        }
        match &cli.command {
            Command::Estimate { z, x, .. } => commands::cmd_estimate(&cfg, z, x, &common.out).map(|_| EXIT_OK),
            Command::Simulate { .. } => commands::cmd_simulate(&cfg, &common.out, w).map(|_| EXIT_OK),
            Command::Law { .. } => commands::cmd_law(&cfg, &common.out, w).map(|_| EXIT_OK),
            Command::Adr { .. } => commands::cmd_adr(&cfg, &common.out, w).map(|_| EXIT_OK),
            Command::Efficiency { .. } => commands::cmd_efficiency(&cfg, &common.out, w).map(|_| EXIT_OK),
            Command::Verify { .. } => commands::cmd_verify(&cfg, &common.out, w).map(|(_, results)| {
                for r in &results {
                    println!("{}", r.line());
                }
                if results.iter().all(|r| r.pass) {
                    EXIT_OK
                } else {
                    EXIT_ACCEPTANCE
                }
            }),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
