//! `foi` — field-of-interest proposal for mitotic counting on whole-slide
//! images: synthesize test slides, compute tissue masks and mitosis maps,
//! propose the 10-HPF region with the highest estimated count, and evaluate
//! against annotated ground truth.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "foi",
    version,
    about = "Field-of-interest proposal for mitotic counting on whole-slide images"
)]
struct Cli {
    /// Run-configuration JSON; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set detector.kind=noisy (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides paths.out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for tile processing (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slide and its annotation file.
    Synth,
    /// Compute the valid-tissue mask.
    Mask,
    /// Run the detector over tiles and write the stitched mitosis map.
    Detect,
    /// Propose the field of interest with the highest estimated count.
    Propose,
    /// Evaluate estimated against ground-truth counts and write reports.
    Evaluate,
}

/// Failure taxonomy mapped to exit codes: config errors exit 2, missing
/// inputs exit 3, pipeline errors exit 4.
#[derive(Debug)]
pub enum CliFailure {
    Config(String),
    MissingInput(String),
    Pipeline(String),
}

impl CliFailure {
    fn exit_code(&self) -> i32 {
        match self {
            CliFailure::Config(_) => 2,
            CliFailure::MissingInput(_) => 3,
            CliFailure::Pipeline(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliFailure::Config(m) | CliFailure::MissingInput(m) | CliFailure::Pipeline(m) => m,
        }
    }
}

impl From<foi_core::FoiError> for CliFailure {
    fn from(err: foi_core::FoiError) -> Self {
        match &err {
            foi_core::FoiError::Io { source, .. }
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                CliFailure::MissingInput(err.to_string())
            }
            _ => CliFailure::Pipeline(err.to_string()),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} threads: {e}");
            std::process::exit(2);
        }
    }

    let result =
        config::load_config(cli.config.as_deref(), &cli.set, cli.out.as_deref()).and_then(|cfg| {
            match cli.command {
                Command::Synth => commands::cmd_synth(&cfg),
                Command::Mask => commands::cmd_mask(&cfg),
                Command::Detect => commands::cmd_detect(&cfg),
                Command::Propose => commands::cmd_propose(&cfg),
                Command::Evaluate => commands::cmd_evaluate(&cfg),
            }
        });

    if let Err(failure) = result {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}
