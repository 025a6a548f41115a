use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use catapult_cli::config::resolve_out_dir;
use catapult_cli::{run, Mode, Options, OutputFormat, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "catapult", version, about = "Stern-Gerlach catapult interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; every mode has built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (else config `output_dir`, then $CATAPULT_OUT_DIR, then ./catapult-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Integrate with this fixed step (s) instead of the adaptive solver.
    #[arg(long, global = true, value_name = "DT")]
    fixed_step: Option<f64>,

    /// Worker threads for sweeps and fits (0 = all cores).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    workers: usize,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Exact single-arm trajectories in one trap.
    Simulate,
    /// Multi-stage catapult protocol with closure.
    Protocol,
    /// Field-accuracy budget tables.
    CoherenceBudget,
    /// Split-step wavepacket evolution.
    Quantum,
    /// Stage-I velocity-law fit and amplitude predictions.
    ScalingFit,
    /// Parallel grid of single-trap runs.
    Sweep,
}

#[derive(ValueEnum, Clone, Copy)]
enum Format {
    Csv,
    Svg,
    Both,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let mode = match cli.command {
        Command::Simulate => Mode::Simulate,
        Command::Protocol => Mode::Protocol,
        Command::CoherenceBudget => Mode::CoherenceBudget,
        Command::Quantum => Mode::Quantum,
        Command::ScalingFit => Mode::ScalingFit,
        Command::Sweep => Mode::Sweep,
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let opts = Options {
        out_dir: resolve_out_dir(cli.out.as_deref(), &cfg),
        format: match cli.format {
            Format::Csv => OutputFormat::Csv,
            Format::Svg => OutputFormat::Svg,
            Format::Both => OutputFormat::Both,
        },
        workers: cli.workers,
        fixed_step: cli.fixed_step,
    };
    let outcome = run(mode, &cfg, &opts)?;
    print!("{}", outcome.summary);
    for f in &outcome.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}
