mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use amr_core::Error;
use clap::Parser;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// 0 success, 2 usage or configuration, 3 data format or I/O,
/// 4 numeric or training failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Range(_) => 2,
        Error::Format { .. } | Error::Io(_) | Error::Json(_) => 3,
        Error::Training { .. } | Error::Dimension(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
