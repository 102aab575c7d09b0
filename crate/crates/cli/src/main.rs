use std::path::PathBuf;
use std::process::ExitCode;

use bisac_cli::{load_scenario, presets, run_scenario, run_sweep, CliError};
use clap::{Parser, Subcommand};

/// Beamforming designs for backscatter-assisted ISAC.
#[derive(Parser)]
#[command(name = "bisac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write its result bundle.
    Run {
        /// Scenario file or preset name (fig3 .. fig12).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the Monte-Carlo trial count.
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Evaluate every point of the scenario's sweep and write sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Check a scenario file without solving it.
    Validate { scenario: String },
    /// List the bundled presets.
    Presets,
}

fn load(name: &str, seed: Option<u64>, trials: Option<u64>) -> Result<bisac_cli::Scenario, CliError> {
    let mut s = load_scenario(name)?;
    if let Some(v) = seed {
        s.seed = v;
    }
    if let Some(v) = trials {
        s.trials = v;
    }
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out, seed, trials } => {
            let s = load(&scenario, seed, trials)?;
            let o = run_scenario(&s, &out)?;
            for (k, v) in &o.metrics {
                println!("{k} = {v}");
            }
            for (k, t) in &o.trials {
                println!("trials.{k} = {} ± {} (analytic {})", t.estimate, t.ci95_halfwidth, t.analytic_reference);
            }
            eprintln!("wrote {} files to {}", o.files.len(), out.display());
        }
        Command::Sweep { scenario, out, seed, trials } => {
            let s = load(&scenario, seed, trials)?;
            let p = run_sweep(&s, &out)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            s.resolve()?;
            println!("{}: ok ({})", s.name, s.stage.name());
        }
        Command::Presets => {
            for n in presets::list_presets() {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
