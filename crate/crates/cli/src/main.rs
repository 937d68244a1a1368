use std::process::ExitCode;

use anodev2_cli::{retain_freed_memory, run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    retain_freed_memory();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
