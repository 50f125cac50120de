//! `bbs`: template matching, simulation, evaluation and benchmarks.

mod commands;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, EvalArgs, MatchArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "bbs", version, about = "Best-Buddies Similarity template matching")]
struct Cli {
    /// Worker threads; defaults to the number of available CPUs.
    #[arg(long, env = "BBS_THREADS", global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match a template against an image.
    Match(MatchArgs),
    /// Run a statistical simulation and write a CSV table.
    Simulate(SimulateArgs),
    /// Evaluate methods on annotated pairs.
    Eval(EvalArgs),
    /// Time the naive and cached matchers.
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    // clap exits with status 2 on malformed flags
    let cli = Cli::parse();
    let threads = cli
        .threads
        .map(|t| t as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = match &cli.command {
        Command::Match(a) => commands::cmd_match(a, threads),
        Command::Simulate(a) => commands::cmd_simulate(a, threads),
        Command::Eval(a) => commands::cmd_eval(a, threads),
        Command::Bench(a) => commands::cmd_bench(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bbs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
