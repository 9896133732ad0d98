mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use gewdiff_core::ErrorKind;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Io => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
