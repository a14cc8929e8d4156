//! Command-line driver for the pipeline stages.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use romcex::pipeline::{
    cmd_assimilate, cmd_build_rom, cmd_emulate, cmd_generate, cmd_report, PipelineConfig,
    StageOutcome,
};
use romcex::Result;

#[derive(Parser)]
#[command(
    name = "romcex",
    version,
    about = "Reduced-order modelling and data assimilation pipeline",
    propagate_version = true
)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for snapshot generation; 0 picks the core count.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce the snapshot matrix and its sidecar.
    Generate,
    /// Decompose the snapshots into the configured reduced model.
    BuildRom,
    /// Train the emulator and evaluate the configured queries.
    Emulate,
    /// Update an ensemble with the configured observations.
    Assimilate,
    /// Consolidate persisted artifacts into a run report.
    Report,
}

fn run(cli: &Cli) -> Result<StageOutcome> {
    let config_path = cli.config.as_deref().ok_or_else(|| romcex::Error::Validation {
        path: "--config".to_string(),
        message: "a configuration file is required".to_string(),
    })?;
    let cfg = PipelineConfig::load(config_path)?.with_overrides(cli.seed, cli.out.clone());

    if cli.threads > 0 {
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::BuildRom => cmd_build_rom(&cfg),
        Command::Emulate => cmd_emulate(&cfg),
        Command::Assimilate => cmd_assimilate(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROMCEX_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
