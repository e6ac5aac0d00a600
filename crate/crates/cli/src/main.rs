mod check;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poco_core::Error;

use crate::commands::Status;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "poco", version, about = "Rotary side-information toolkit: invariant checks, benchmarks and dumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration. Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed to run; repeat for several. Replaces the configured list.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print machine-readable JSON instead of a summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomised invariant suite.
    Check,
    /// Paired with/without side-info retrieval and training comparison.
    ConfusionBench,
    /// Finite-difference check of the toy layer's gradients.
    GradCheck,
    /// Write the hierarchical cross-attention mask and token coordinates.
    MaskDump {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Shot-to-reference attention for one fixture, with and without side info.
    Heatmap,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Config(_) | Error::Json(_) | Error::Layout(_) | Error::Parse(_) | Error::Argument(_) => 2,
        Error::Numeric { .. } | Error::Diverged { .. } => 1,
    }
}

fn init_threads() -> poco_core::Result<()> {
    let Ok(raw) = std::env::var("POCO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("POCO_THREADS must be a non-negative integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn run(cli: &Cli) -> poco_core::Result<Status> {
    init_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?.with_overrides(&cli.seeds, cli.out.as_deref());
    cfg.validate()?;
    match &cli.command {
        Command::Check => commands::check(&cfg, cli.json),
        Command::ConfusionBench => commands::confusion_bench(&cfg, cli.json),
        Command::GradCheck => commands::grad_check(&cfg, !cli.seeds.is_empty(), cli.json),
        Command::MaskDump { manifest } => commands::mask_dump(&cfg, manifest, cli.json),
        Command::Heatmap => commands::heatmap(&cfg, cli.json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("poco: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
