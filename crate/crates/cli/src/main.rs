//! `ice`: run the image-caption fusion engine over ICEB embedding bundles.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ice_core::Reduction;

mod commands;
mod config;

use config::ConfigArgs;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  I/O failure while writing output
  2  invalid configuration, axis, value or generator spec
  3  bundle missing, unreadable or failing validation
  4  sample id out of range";

#[derive(Debug, Parser)]
#[command(name = "ice", version, about = "Zero-shot classification with image-caption fusion", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print fused predictions for selected samples.
    Predict(PredictArgs),
    /// Evaluate bundles and write JSON and CSV reports.
    Evaluate(EvaluateArgs),
    /// Sweep one hyperparameter and write the accuracy grid as CSV.
    Ablate(AblateArgs),
    /// Check a bundle's structure, checksums and invariants.
    ValidateBundle(ValidateArgs),
    /// Write a seeded synthetic bundle.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Comma-separated sample ids.
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<usize>,
    /// Prototype reduction; defaults to the one stored in the bundle.
    #[arg(long)]
    reduction: Option<Reduction>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Bundle files; repeat the flag for several.
    #[arg(long = "bundle")]
    bundles: Vec<PathBuf>,
    /// Comma-separated methods, e.g. `image_only,ice,ice@score_mean`.
    #[arg(long)]
    methods: Option<String>,
    /// Full JSON report (default ice-report.json).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Metrics CSV (default ice-report.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// One of xi, K, upsilon, lambda_fixed.
    #[arg(long)]
    axis: String,
    /// Comma-separated sweep values; `max` means K = number of classes.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Grid CSV (default ablation.csv); the resolved config goes to
    /// `<out>.config.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    path: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Captions per image.
    #[arg(long = "captions")]
    captions: Option<usize>,
    #[arg(long)]
    caption_signal: Option<f64>,
    #[arg(long)]
    image_noise: Option<f64>,
    #[arg(long)]
    caption_noise: Option<f64>,
    #[arg(long)]
    caption_noise_spread: Option<f64>,
    #[arg(long)]
    prompts_per_class: Option<usize>,
    #[arg(long)]
    prompt_noise: Option<f64>,
    #[arg(long)]
    temperature_hint: Option<f64>,
    #[arg(long)]
    with_caption_texts: bool,
    /// Benchmark group written to the manifest.
    #[arg(long)]
    group: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Bundle(String),
    OutOfRange(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Bundle(_) => 3,
            Failure::OutOfRange(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Bundle(m) | Failure::OutOfRange(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::ValidateBundle(a) => commands::validate_bundle(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
