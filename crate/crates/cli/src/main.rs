mod args;
mod commands;

use args::{Cli, Command};
use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;
use std::process::ExitCode;

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<ovlink_core::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io_failure";
    }
    if err.downcast_ref::<serde_json::Error>().is_some()
        || err.downcast_ref::<csv::Error>().is_some()
    {
        return "serialization_failure";
    }
    "error"
}

fn fail(kind: &str, message: String) -> ExitCode {
    let body = json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string()),
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Predict(a) => commands::predict(a),
        Command::OptimizePilot(a) => commands::optimize_pilot(a),
        Command::Replay(a) => commands::replay_row(a),
    };
    match result {
        Ok(value) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("JSON values serialize")
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(error_kind(&e), format!("{e:#}")),
    }
}
