use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod error;
mod plot;
mod report;
mod rules;
mod run;

use error::CliError;

/// Discrete-event simulator for privacy-aware KV-cache sharing.
#[derive(Debug, Parser)]
#[command(name = "safekv-sim", version, about)]
struct Cli {
    /// Scenario config (JSON). Used by `run` when no positional path is given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config's `output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every policy of a scenario on one shared workload.
    Run {
        /// Scenario config; falls back to `--config`.
        path: Option<PathBuf>,
    },
    /// Manage Tier-1 pattern rules.
    Rules {
        /// Pattern config; defaults to `privacy_pattern_config.json` in the
        /// working directory if present, else the built-in rules.
        #[arg(long, env = "SAFEKV_SIM_PATTERNS")]
        patterns: Option<PathBuf>,

        #[command(subcommand)]
        action: rules::RulesAction,
    },
    /// Aggregate run artifacts into CSV tables and SVG plots.
    Report {
        /// Run directories or single-policy artifact directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .without_time()
        .init();

    let result = match &cli.command {
        Command::Run { path } => match path.as_ref().or(cli.config.as_ref()) {
            Some(p) => run::cmd_run(p, &run::Overrides::from_cli(&cli)),
            None => Err(CliError::Config("no scenario config given (use a path or --config)".into())),
        },
        Command::Rules { patterns, action } => rules::cmd_rules(patterns.as_deref(), action),
        Command::Report { dirs } => {
            let out = cli.output.clone().unwrap_or_else(|| dirs[0].join("report"));
            report::cmd_report(dirs, &out, cli.quiet)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safekv-sim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
