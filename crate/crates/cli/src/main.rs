//! Batch command-line interface for the region-based segmentation
//! framework: dataset generation, training, evaluation, gradient checking,
//! prediction and the ablation battery.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or validation failure.

mod args;
mod commands;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", err);
                std::process::exit(0);
            }
            eprint!("{}", err);
            std::process::exit(1);
        }
    };
    if let Err(err) = commands::run(cli) {
        eprintln!("error: {}", err);
        std::process::exit(2);
    }
}
