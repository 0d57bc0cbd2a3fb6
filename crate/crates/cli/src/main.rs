use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod decode;
mod fetch;
mod generate;
mod infer;
mod inputs;
mod manifest;
mod pipeline;
mod simulate;
mod stats;

use config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "idslice", version, about = "Census toolkit for Snowflake-style ID spaces")]
struct Cli {
    /// Toolkit config file (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed. Falls back to the config's `seed`, then IDSLICE_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the run manifest. Defaults to a file beside the main output.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split IDs into their fields.
    Decode(decode::Args),
    /// Build a pattern catalog, predictability table, histograms and coverage report from a corpus.
    Infer(infer::Args),
    /// Good-Turing coverage of a corpus or catalog.
    Coverage(infer::CoverageArgs),
    /// Write the candidate IDs for a time range.
    Generate(generate::Args),
    /// Probe candidate IDs and record every outcome.
    Fetch(fetch::Args),
    /// Generate a simulated platform and export its ground truth.
    Simulate(simulate::Args),
    /// Census statistics over fetched results or ground truth.
    #[command(subcommand)]
    Stats(stats::Command),
    /// Run simulate, infer, coverage, generate, fetch and stats from one config.
    Pipeline(pipeline::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::Context::load(cli.config.as_deref(), cli.seed, cli.manifest.clone()).and_then(|ctx| match cli.command {
        Command::Decode(a) => decode::run(&ctx, a),
        Command::Infer(a) => infer::run(&ctx, a),
        Command::Coverage(a) => infer::run_coverage(&ctx, a),
        Command::Generate(a) => generate::run(&ctx, a),
        Command::Fetch(a) => fetch::run(&ctx, a),
        Command::Simulate(a) => simulate::run(&ctx, a),
        Command::Stats(c) => stats::run(&ctx, c),
        Command::Pipeline(a) => pipeline::run(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Anything that is not a config problem failed inside a stage.
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
