use std::io;
use std::process::ExitCode;

use blindsim::cli::{execute, Cli, EXIT_ERROR};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli, &mut io::stdout().lock(), &mut io::stderr().lock()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}
