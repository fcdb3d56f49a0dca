use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod run;

#[derive(Parser)]
#[command(name = "microtube", version, about = "Random billiards in a tube with microstructured walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate the microstructure.
    Validate(Opts),
    /// Run the chain ensemble and dump partial sums.
    Simulate(Opts),
    /// Displacement tails against the exact law.
    Tails(Opts),
    /// Normalised partial sums against the Gaussian limit.
    Clt(Opts),
    /// Ulam matrices, spectral gap and the twisted eigenvalue curve.
    Spectrum(Opts),
    /// Jacobians, pushforward invariance, mixing and determinism.
    Diagnostics(Opts),
    /// Everything above in order.
    All(Opts),
}

#[derive(Args)]
struct Opts {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write visit traces to traces.jsonl.
    #[arg(long)]
    dump_traces: bool,
}

fn main() -> ExitCode {
    let (stage, o) = match Cli::parse().command {
        Command::Validate(o) => (run::Stage::Validate, o),
        Command::Simulate(o) => (run::Stage::Simulate, o),
        Command::Tails(o) => (run::Stage::Tails, o),
        Command::Clt(o) => (run::Stage::Clt, o),
        Command::Spectrum(o) => (run::Stage::Spectrum, o),
        Command::Diagnostics(o) => (run::Stage::Diagnostics, o),
        Command::All(o) => (run::Stage::All, o),
    };
    let settings = run::Settings {
        config: o.config,
        workers: o.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1),
        out: o.out,
        dump_traces: o.dump_traces,
    };
    ExitCode::from(run::execute(stage, &settings))
}
