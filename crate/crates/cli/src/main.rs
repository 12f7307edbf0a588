mod args;
mod commands;
mod error;
mod input;
mod report;

use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, RunConfig};
use error::{categorize, exit_code, format_error, usage, CliResult};

/// Recovers the configuration embedded in an earlier report.
fn config_from_report(path: &std::path::Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    let report: Value = serde_json::from_str(&text)?;
    let config = report
        .get("run_config")
        .cloned()
        .ok_or_else(|| format_error(format!("{} has no run_config", path.display())))?;
    serde_json::from_value(config).map_err(|e| format_error(format!("{}: run_config: {e}", path.display())))
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|prev| prev.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("threads must be positive"));
        }
    }
    if !matches!(cli.command, Command::Rerun(_)) {
        cli.command.validate()?;
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting worker pool")?;
    }
    let config = match cli.command {
        Command::Rerun(r) => {
            let config = config_from_report(&r.from)?;
            config.command.validate()?;
            config
        }
        command => RunConfig {
            seed: cli.seed,
            command,
        },
    };
    let outcome = commands::run(&config)?;
    let text = if cli.csv {
        outcome.csv.clone().unwrap_or_default()
    } else {
        report::render_json(&config, &outcome.result)?
    };
    report::emit(&text, cli.report.as_deref())?;
    match outcome.failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = categorize(&err);
            eprintln!("vismem: {category} error: {}", describe(&err));
            ExitCode::from(exit_code(category) as u8)
        }
    }
}
