//! `singlab`: run singular-problem experiments from JSON configs.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "singlab",
    version,
    about = "Singular semilinear elliptic experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `output.directory` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write u, v and diagnostics.
    Solve {
        #[command(flatten)]
        io: Io,
        /// Exponent override.
        #[arg(long)]
        n: Option<f64>,
    },
    /// Sweep the exponent and tabulate diagnostics per n.
    Sweep {
        #[command(flatten)]
        io: Io,
    },
    /// Tabulate the exact 1-D constructions.
    Oned {
        #[command(flatten)]
        io: Io,
    },
    /// Collapse the concentrated load to atoms and solve the limit problem.
    LimitCheck {
        #[command(flatten)]
        io: Io,
    },
    /// Compare with the harmonic extension outside the support (report only).
    Conjecture {
        #[command(flatten)]
        io: Io,
    },
}

fn out_dir(io: &Io, cfg: &ExperimentConfig) -> Result<PathBuf> {
    match (&io.out, &cfg.output.directory) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(d)) => Ok(PathBuf::from(d)),
        (None, None) => Err(ConfigError("no --out given and no output.directory".into()).into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let io = match &cli.command {
        Command::Solve { io, .. }
        | Command::Sweep { io }
        | Command::Oned { io }
        | Command::LimitCheck { io }
        | Command::Conjecture { io } => io,
    };
    let cfg = ExperimentConfig::load(&io.config)?;
    let out = out_dir(io, &cfg)?;
    match &cli.command {
        Command::Solve { n, .. } => commands::solve(&cfg, *n, &out),
        Command::Sweep { .. } => commands::sweep(&cfg, &out),
        Command::Oned { .. } => commands::oned(&cfg, &out),
        Command::LimitCheck { .. } => commands::limit_check(&cfg, &out),
        Command::Conjecture { .. } => commands::conjecture(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
