mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use crate::args::{Cli, Command};

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Validate(args) => commands::validate(args),
        Command::Mos(args) => commands::mos(args),
        Command::Eval(args) => commands::eval(args),
        Command::EvalBaseline(args) => commands::eval_baseline(args),
        Command::Leaderboard(args) => commands::leaderboard(args),
        Command::Describe(args) => commands::describe(args),
        Command::Serve(args) => commands::serve(args),
        Command::MockScorer(args) => commands::mock_scorer(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
