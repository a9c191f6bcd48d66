//! `peo` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or configuration error,
//! 3 a single optimization diverged, 4 an experiment finished with failed
//! rows.

pub mod commands;
pub mod config;
pub mod http;

use std::fmt;

use clap::{Args, Parser, Subcommand};

pub use commands::run;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// Environment variable naming a directory of backbone descriptors.
pub const BACKENDS_DIR_ENV: &str = "PEO_BACKENDS_DIR";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Self::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "peo",
    version,
    about = "Prompt embedding optimization for text-to-image backbones"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one prompt and write before/after images and the trace.
    Optimize(RunArgs),
    /// Zero-step baseline against PEO over a prompt set.
    Eval(RunArgs),
    /// The four objective-term combinations over a prompt set.
    Ablate(RunArgs),
    /// Learning-rate, weight-grid or optimizer sweep over a prompt set.
    Sweep(SweepArgs),
    /// Shorten a prompt set through a chat-completion endpoint.
    Simplify(SimplifyArgs),
    /// List registered backbones and run their capability checks.
    Backends,
}

/// Flags shared by every run command. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub backbone: Option<String>,
    /// Sampling preset: sd15 or turbo.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_set: Option<std::path::PathBuf>,
    /// diffusiondb, coco, simplified, peo or custom.
    #[arg(long)]
    pub origin: Option<String>,
    /// Objective weights as `w1,w2,w3`.
    #[arg(long, allow_hyphen_values = true)]
    pub weights: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// gd, adam or adamw.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub sampling_steps: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// lr, weights or optimizer.
    #[arg(long)]
    pub kind: Option<String>,
    /// Comma-separated learning rates, grid values or algorithm names.
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimplifyArgs {
    #[arg(long)]
    pub prompt_set: std::path::PathBuf,
    #[arg(long)]
    pub origin: Option<String>,
    /// File to write the simplified prompt set to.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// OpenAI-compatible chat-completions URL.
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
}
