//! `dgclr`: ingest, train, evaluate, explain, ablate and bench.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod args;
mod commands;
mod support;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use support::UsageError;

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<dgclr::Error>(),
                Some(dgclr::Error::Config(_))
            )
    })
}

fn main() -> ExitCode {
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
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Explain(a) => commands::explain(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
