//! `hydrofit` command-line front end.
//!
//! Every subcommand writes into its own output directory (`--out`) and
//! leaves a `manifest.json` describing the run next to its results.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod flags;
mod output;

use std::process::ExitCode;

use clap::Parser;

use flags::{Cli, UsageError};

fn init_threads() -> Result<(), UsageError> {
    let Ok(raw) = std::env::var("HYDROFIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UsageError(format!("HYDROFIT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(format!("cannot size thread pool: {e}")))?;
    log::debug!("thread pool capped at {n}");
    Ok(())
}

/// Error chain on one line, dropping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|prev| prev.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("error: {e}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {}", describe(&e));
                ExitCode::from(1)
            }
        }
    }
}
