use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use qengine::cli::{self, RunConfig};

#[derive(Parser)]
#[command(name = "qengine", version, about = "Two-ion four-stroke quantum engine simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (overrides `workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for noise injection in `fit` (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one cycle and write its time series and summary.
    RunCycle(Common),
    /// Sweep the charging time over the configured grid.
    Sweep(Common),
    /// Fit phonon populations to a blue-sideband signal.
    Fit(Common),
    /// Re-run a cycle with larger Fock truncations and report the drift.
    AuditTruncation(Common),
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => cli::parse_config(path)?,
        None => cli::parse_config_str("", std::path::Path::new("<defaults>"), std::env::vars())?,
    };
    if let Some(out) = &common.out {
        cfg.output.directory = out.clone();
    }
    if let Some(w) = common.workers {
        anyhow::ensure!(w >= 1, "--workers must be at least 1");
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, name) = match &cli.command {
        Command::RunCycle(c) => (c, "run-cycle"),
        Command::Sweep(c) => (c, "sweep"),
        Command::Fit(c) => (c, "fit"),
        Command::AuditTruncation(c) => (c, "audit-truncation"),
    };
    let cfg = load(common)?;
    let written = match cli.command {
        Command::RunCycle(_) => cli::cmd_run_cycle(&cfg),
        Command::Sweep(_) => cli::cmd_sweep(&cfg),
        Command::Fit(_) => cli::cmd_fit(&cfg),
        Command::AuditTruncation(_) => cli::cmd_audit_truncation(&cfg).map(|(files, drift)| {
            eprintln!("max drift {drift:.3e}");
            files
        }),
    }
    .with_context(|| format!("{name} failed"))?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
