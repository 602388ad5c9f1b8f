//! `flowbal` — synthesize internal-model edge controllers for flow networks,
//! simulate the closed loop, and run randomized verification suites.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::SimOverrides;

#[derive(Parser)]
#[command(
    name = "flowbal",
    version,
    about = "Load balancing for flow networks under time-varying demand: \
             controller synthesis, closed-loop simulation, and verification suites"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the steady-flow maps and the per-edge controller table for a
    /// scenario, without simulating.
    Synthesize {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Output format.
        #[arg(long, value_parser = ["text", "json"], default_value = "text")]
        format: String,
    },
    /// Run the closed loop described by a scenario; writes the trajectory as
    /// CSV and the certificate report as JSON. Exits 0 only if every enabled
    /// certificate passes.
    Simulate {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Directory for the trajectory CSV and report JSON.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the scenario's integration step (seconds).
        #[arg(long)]
        step: Option<f64>,
        /// Override the scenario's horizon (seconds).
        #[arg(long)]
        horizon: Option<f64>,
        /// Output format for the summary printed to stdout.
        #[arg(long, value_parser = ["text", "json"], default_value = "text")]
        format: String,
    },
    /// Run a randomized verification suite. Exits 0 only if every case
    /// passes.
    Verify {
        /// Suite name: lemma1, lemma3, theorem1, corollary1, saturation,
        /// positivity, or all.
        suite: String,
        /// Seed for the suite's random scenario generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory to write per-suite report JSON files into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format.
        #[arg(long, value_parser = ["text", "json"], default_value = "text")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: std::result::Result<bool, (u8, String)> = match &cli.cmd {
        Cmd::Synthesize { scenario, format } => {
            commands::cmd_synthesize(scenario, format).map(|()| true)
        }
        Cmd::Simulate {
            scenario,
            out,
            step,
            horizon,
            format,
        } => commands::cmd_simulate(
            scenario,
            &SimOverrides {
                step: *step,
                horizon: *horizon,
                out_dir: out,
                format,
            },
        ),
        Cmd::Verify {
            suite,
            seed,
            out,
            format,
        } => commands::cmd_verify(suite, *seed, out.as_deref(), format),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
