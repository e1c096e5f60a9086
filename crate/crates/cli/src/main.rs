use std::process::ExitCode;

use clap::Parser;
use mmapf_cli::cli::{run, Cli, EXIT_INPUT};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
