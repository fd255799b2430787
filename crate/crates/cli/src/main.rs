mod args;
mod commands;
mod files;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ecgtl_core::Error;
use ecgtl_train::TrainError;

use args::Cli;

/// Exit status: 0 success, 1 usage or configuration, 2 data, 3 divergence.
fn exit_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Divergence { .. } => 3,
        TrainError::Core(Error::Config(_)) => 1,
        TrainError::Core(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
