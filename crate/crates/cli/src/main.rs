use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvsde_cli::config::{ExperimentConfig, ExperimentKind};
use mvsde_cli::plot::PlotKind;
use mvsde_cli::{commands, CliError};

/// Simulation toolkit for McKean-Vlasov SDEs via interacting particle
/// systems: split-step implicit, tamed and adaptive Euler schemes.
#[derive(Parser)]
#[command(name = "mvsde", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured worker-thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scheme and write a trajectory summary CSV.
    Run(ExperimentArgs),
    /// Strong/weak errors over a step grid against a fine reference.
    Convergence(ExperimentArgs),
    /// Mean-square contractivity diagnostics of the split-step scheme.
    Stability(ExperimentArgs),
    /// Wall-clock timings per scheme and thread count.
    Bench(ExperimentArgs),
    /// Render a CSV produced by this tool as a static SVG chart.
    Plot {
        /// Input CSV.
        csv: PathBuf,
        /// Chart kind: convergence, stability or run.
        #[arg(long)]
        kind: String,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &ExperimentArgs) -> mvsde_cli::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn dispatch(command: &Command) -> mvsde_cli::Result<PathBuf> {
    match command {
        Command::Run(args) => {
            let cfg = load(args)?;
            expect_kind(&cfg, ExperimentKind::Run)?;
            commands::cmd_run(&cfg)
        }
        Command::Convergence(args) => {
            let cfg = load(args)?;
            expect_kind(&cfg, ExperimentKind::Convergence)?;
            commands::cmd_convergence(&cfg)
        }
        Command::Stability(args) => {
            let cfg = load(args)?;
            expect_kind(&cfg, ExperimentKind::Stability)?;
            commands::cmd_stability(&cfg)
        }
        Command::Bench(args) => {
            let cfg = load(args)?;
            expect_kind(&cfg, ExperimentKind::Bench)?;
            commands::cmd_bench(&cfg)
        }
        Command::Plot { csv, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            mvsde_cli::plot::cmd_plot(csv, kind, out)
        }
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> mvsde_cli::Result<()> {
    if cfg.experiment != kind {
        return Err(CliError::Config(format!(
            "config declares experiment \"{}\"; use the matching subcommand",
            cfg.experiment.name()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
