use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psi_core::experiment::{
    analyze_dir, plot_manifest, run_checks, run_scenario, ScenarioConfig, ScenarioKind, WORKERS_ENV,
};
use psi_core::Error;

/// Polarization scrambling interferometer simulator.
#[derive(Debug, Parser)]
#[command(name = "psi-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Simulate { config: PathBuf },
    /// Recompute fits and pedestal powers for a finished run directory.
    Analyze { dir: PathBuf },
    /// Check the simulator against its independent references.
    Verify {
        /// Fewer Monte Carlo rotations and configurations.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the span-count sweep with the settings of a config, whatever its kind.
    Sweep { config: PathBuf },
    /// Re-render the plots of a run from its manifest.
    Plot { manifest: PathBuf },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn workers_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Validation(format!("{WORKERS_ENV}: expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn simulate(cfg: ScenarioConfig) -> Result<(), Failure> {
    let report = run_scenario(&cfg)?;
    println!(
        "{} run written to {} ({} artifacts)",
        cfg.kind.label(),
        report.output_dir.display(),
        report.manifest.artifacts.len()
    );
    println!("{}", serde_json::to_string_pretty(&report.summary).unwrap_or_default());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config } => simulate(ScenarioConfig::load(&config)?),
        Command::Sweep { config } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            cfg.kind = ScenarioKind::DistanceSweep;
            simulate(cfg)
        }
        Command::Analyze { dir } => {
            let rows = analyze_dir(&dir)?;
            println!("{:<16} {:>14} {:>10} {:>16}", "label", "fwhm_hz", "converged", "pedestal_power");
            for r in rows {
                println!("{:<16} {:>14.6e} {:>10} {:>16.6e}", r.label, r.fwhm_hz, r.converged, r.pedestal_power);
            }
            Ok(())
        }
        Command::Verify { quick, seed } => {
            let checks = run_checks(quick, seed, workers_from_env()?)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Runtime("verification failed".into()))
            }
        }
        Command::Plot { manifest } => {
            for a in plot_manifest(&manifest)? {
                println!("{}", a.path);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
