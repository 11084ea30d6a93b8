use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vap_engine::pipeline::{cmd_bench, cmd_eval, cmd_simulate, cmd_stream, cmd_synth_data, cmd_train, RunConfig};

/// Noise-robust turn-taking engine: data synthesis, training, evaluation,
/// latency simulation and streaming.
#[derive(Parser)]
#[command(name = "vapctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.mode=clean`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic dialogues with labels and an 8:1:1 split.
    SynthData(Common),
    /// Train a predictor on the dataset (clean or multi-condition).
    Train(Common),
    /// Test-set VAP loss per SNR level for one or more checkpoints.
    Eval(Common),
    /// Response-time simulation for the configured policies.
    Simulate(Common),
    /// Replay a WAV file through the streaming runtime.
    Stream {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set stream.input=...`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Time streaming ticks against the real-time budget.
    Bench(Common),
}

fn print<T: Serialize>(report: &T) -> vap_engine::Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn run(cli: Cli) -> vap_engine::Result<()> {
    let resolve = |c: &Common, extra: Vec<String>| {
        let mut overrides = c.overrides.clone();
        overrides.extend(extra);
        RunConfig::resolve(c.config.as_deref(), &overrides)
    };
    match cli.command {
        Command::SynthData(c) => print(&cmd_synth_data(&resolve(&c, vec![])?)?),
        Command::Train(c) => print(&cmd_train(&resolve(&c, vec![])?)?),
        Command::Eval(c) => {
            let report = cmd_eval(&resolve(&c, vec![])?)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Simulate(c) => print(&cmd_simulate(&resolve(&c, vec![])?)?),
        Command::Stream { common, input } => {
            let extra = input
                .map(|p| vec![format!("stream.input={}", serde_json::json!(p))])
                .unwrap_or_default();
            print(&cmd_stream(&resolve(&common, extra)?)?)
        }
        Command::Bench(c) => print(&cmd_bench(&resolve(&c, vec![])?)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
