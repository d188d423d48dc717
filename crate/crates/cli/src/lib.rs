//! `pconvex` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (certified, consistent, estimates within bounds) |
//! | 2 | configuration or parse error, including unreadable input forms |
//! | 3 | not certified: `ρ` not strictly p-psh, `L^(m) ≤ 0`, or an estimate above its constant |
//! | 4 | numeric or I/O failure, or `verify` found the theorem inconsistent |
//! | 5 | `solve`: input form is not closed |
//! | 6 | `solve`: CG did not converge (diagnosis printed) |

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pconvex", version, about = "p-convexity, weighted estimates and de Rham vanishing on gridded domains")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify strict p-plurisubharmonicity of rho and tabulate L^(m).
    Analyze,
    /// Build the weight chain and write phi, psi, mu.
    Weights,
    /// Solve d(alpha) = eta for a closed form eta.
    Solve {
        /// Form manifest (JSON) of eta, as written by the form writer.
        #[arg(long)]
        eta: PathBuf,
    },
    /// Betti numbers of the masked grid complex.
    Betti,
    /// Check b_k = 0 for k >= p when rho is certified.
    Verify,
    /// Empirical constants of the basic and weighted estimates.
    CheckEstimates,
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pconvex::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        use pconvex::Error as E;
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e {
                E::Contract(_)
                | E::Parse(_)
                | E::Eval(_)
                | E::Stencil { .. }
                | E::OffGrid { .. }
                | E::EmptySublevel { .. }
                | E::GridMismatch(_)
                | E::Json(_)
                | E::Csv(_) => 2,
                E::NotStrictlyConvex { .. } => 3,
                E::NotClosed { .. } => 5,
                E::NoConvergence { .. } => 6,
                _ => 4,
            },
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self {
            Failure::Core(pconvex::Error::NoConvergence {
                diagnosis: pconvex::Diagnosis::Cohomology,
                ..
            }) => Some("eta appears to carry a nonzero cohomology class; `pconvex betti` shows the Betti numbers"),
            Failure::Core(pconvex::Error::NoConvergence { .. }) => {
                Some("raise tolerances.max_iter or refine the grid")
            }
            Failure::Core(pconvex::Error::NotStrictlyConvex { .. }) => {
                Some("rho is not strictly p-plurisubharmonic on the sublevel set; `pconvex analyze` shows the witness")
            }
            _ => None,
        }
    }
}

/// Loads the config, applies the flag overrides and dispatches. Returns the
/// exit code for verdicts (certified or not); errors carry their own code.
pub fn run(cli: &Cli) -> Result<u8, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    let ctx = commands::Context::new(config, cli.quiet)?;
    match &cli.command {
        Command::Analyze => commands::analyze(&ctx),
        Command::Weights => commands::weights(&ctx),
        Command::Solve { eta } => commands::solve(&ctx, eta),
        Command::Betti => commands::betti(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::CheckEstimates => commands::check_estimates(&ctx),
    }
}
