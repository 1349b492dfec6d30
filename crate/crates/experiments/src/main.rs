use std::process::ExitCode;

use clap::Parser;
use ngcn_experiments::cli::{run, write_outputs, Cli};
use ngcn_experiments::ExperimentError;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run(&cli.command).and_then(|(report, common)| write_outputs(&report, common));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ ExperimentError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
