use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modsel_core::harness::{
    self, read_logs, read_scenario, resolve_out_dir, run_to_dir, write_report, Scenario,
};

/// Mod-IGW contextual bandit simulator.
#[derive(Parser)]
#[command(name = "modsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-seed logs.
    Run {
        scenario: PathBuf,
        /// Output directory; relative paths resolve under $MODSEL_OUT_ROOT if set.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds replacing the scenario's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Dotted-path override, e.g. run.tau1=64. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Aggregate a run directory into CSV curves and a detection report.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> modsel_core::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seeds,
            mut overrides,
        } => {
            if let Some(seeds) = seeds {
                overrides.push(format!("run.seeds={}", serde_json::to_string(&seeds)?));
            }
            let scenario = Scenario::load(&scenario, &overrides)?;
            let dir = resolve_out_dir(&out);
            let summary = run_to_dir(&scenario, &dir)?;
            println!(
                "{}: {} seed(s) written to {}",
                scenario.name,
                summary.written.len(),
                dir.display()
            );
            if let Some((seed, e)) = summary.failed.first() {
                for (seed, e) in &summary.failed {
                    eprintln!("seed {seed}: {e}");
                }
                return Err(modsel_core::Error::Invariant(format!(
                    "{} seed(s) failed, first was seed {seed}: {e}",
                    summary.failed.len()
                )));
            }
            Ok(())
        }
        Command::Report { dir } => {
            let dir = resolve_out_dir(&dir);
            let scenario = read_scenario(&dir)?;
            let logs = read_logs(&dir)?;
            let curve = write_report(&dir, &logs, scenario.classes.len())?;
            if let Some(last) = curve.last() {
                println!(
                    "{}: R_{} = {:.3} +/- {:.3} over {} seed(s)",
                    scenario.name, last.t, last.mean, last.stderr, last.seeds
                );
            }
            println!(
                "wrote {}, {}, {}",
                harness::report::CURVE_FILE,
                harness::report::DETECTION_FILE,
                harness::report::TIMELINE_FILE
            );
            Ok(())
        }
    }
}
