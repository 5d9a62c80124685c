//! `xdjdl`: synthesise, preprocess, train, infer and evaluate PPG-to-ECG
//! reconstruction models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numeric failure.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xdjdl_core::Error;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "xdjdl", version, about = "Cross-domain joint dictionary learning for PPG-to-ECG reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for inputs and artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate synthetic records or a planted cycle set.
    Synth,
    /// Turn records into normalised cycle pairs.
    Preprocess,
    /// Train the configured model on the training split.
    Train,
    /// Reconstruct ECG cycles of the test split.
    Infer,
    /// Score reconstructions and write reports.
    Eval,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Missing(PathBuf),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Core(e) => match e {
                Error::InvalidParams(_)
                | Error::SparsityExceedsAtoms { .. }
                | Error::TooFewSamples { .. }
                | Error::LabelOutOfRange { .. }
                | Error::DimensionMismatch(_)
                | Error::CombinatorialGuard(_) => 2,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::ShapeMismatch(_)
                | Error::BadMagic
                | Error::UnsupportedVersion(_)
                | Error::CorruptEntryTable(_) => 3,
                _ => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Missing(p) => write!(f, "missing input: {}", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => commands::synth(&cfg, out),
        Command::Preprocess => commands::preprocess(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Infer => commands::infer(&cfg, out),
        Command::Eval => commands::eval(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("xdjdl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
