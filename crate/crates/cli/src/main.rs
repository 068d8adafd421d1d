use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analyze;
mod compare;
mod simulate;

#[derive(Parser, Debug)]
#[command(name = "colloc", version, about = "Simulate and analyse two-station pulsed Bell sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a session and write its manifest and tag files.
    Simulate(simulate::SimulateArgs),
    /// Analyse a session directory and write the report bundle.
    Analyze(analyze::AnalyzeArgs),
    /// Compare a near and a far session and report the verdict.
    Compare(compare::CompareArgs),
}

/// Analysis flags shared by `analyze` and `compare`.
#[derive(Args, Debug, Clone)]
pub struct AnalysisFlags {
    /// Coincidence window, ns.
    #[arg(long, default_value_t = 4.0)]
    pub window_ns: f64,
    /// Histogram slot width, ns.
    #[arg(long, default_value_t = 2.0)]
    pub slot_ns: f64,
    /// Trigger-minus-pump-edge lag used to place the histogram, ns.
    #[arg(long, default_value_t = 65.0)]
    pub nominal_tdif_ns: f64,
    /// Standard deviations above 2 that S must reach to count as a violation.
    #[arg(long, default_value_t = 3.0)]
    pub violation_sigmas: f64,
}

impl AnalysisFlags {
    pub fn params(&self) -> colloc::analysis::AnalysisParams {
        colloc::analysis::AnalysisParams {
            window_ns: self.window_ns,
            slot_ns: self.slot_ns,
            nominal_tdif_ns: self.nominal_tdif_ns,
            violation_sigmas: self.violation_sigmas,
        }
    }
}

pub fn manifest_path(dir: &std::path::Path) -> PathBuf {
    dir.join(colloc::tagio::MANIFEST_NAME)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate::run(&args).map(|()| 0),
        Command::Analyze(args) => analyze::run(&args).map(|()| 0),
        Command::Compare(args) => compare::run(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
