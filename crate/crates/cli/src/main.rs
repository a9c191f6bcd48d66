use std::process::ExitCode;

use clap::Parser;
use peo_cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
