use std::process::ExitCode;

use clap::{Parser, Subcommand};
use framequery::{bench, datagen};

#[derive(Parser)]
#[command(
    name = "framequery",
    version,
    about = "Wisconsin data generation and query benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Wisconsin benchmark relation as JSON lines.
    Datagen(datagen::DatagenArgs),
    /// Run the 13 benchmark expressions and print a JSON report.
    Bench(bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Datagen(args) => datagen::run_cli(args).map_err(|e| e.to_string()),
        Command::Bench(args) => bench::run_cli(args).map(|_| ()).map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
