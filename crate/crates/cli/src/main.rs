use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod analyze;
mod quantize;
mod report;
mod train;

/// Scale-learned 4-bit quantization of a toy multimodal model.
#[derive(Parser)]
#[command(name = "qslaw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArmChoice {
    MultimodalOnly,
    Hybrid,
    Warmup,
    /// All three arms from one shared pretrained model.
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, quantize and fine-tune; writes checkpoint.qsck and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured arm; `all` writes one subdirectory per arm.
        #[arg(long, value_enum)]
        arm: Option<ArmChoice>,
        #[arg(long)]
        steps: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Packs weight matrices into 4-bit containers.
    Quantize {
        /// CSV matrix (one row per line) or a checkpoint; repeatable.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, short = 'g', default_value_t = 128)]
        group: usize,
        #[arg(long, short = 'k', default_value_t = 4)]
        bits: u8,
        #[arg(long, default_value = "uniform")]
        codebook: String,
        /// Print per-layer MSE of both codebooks to stderr.
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Writes outliers.csv, alignment.csv and their charts for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Multimodal probe sequences.
        #[arg(long, default_value_t = 16)]
        multimodal: usize,
        /// Text probe sequences; 0 skips the text batch.
        #[arg(long, default_value_t = 16)]
        text: usize,
        #[arg(long, default_value_t = qslaw::analysis::DEFAULT_KAPPA)]
        kappa: f64,
    },
    /// Renders loss, accuracy and perplexity charts from metrics files.
    Report {
        /// metrics.csv files, or run directories holding them directly or one level down.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Failure classes mapped onto exit codes.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<qslaw::Error> for Failure {
    fn from(e: qslaw::Error) -> Self {
        use qslaw::Error::*;
        match e {
            Io(_) | Format(_) => Failure::Runtime(format!("file error: {e}")),
            Diverged { .. } | NonFinite(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, arm, steps, output } => train::run(&config, arm, steps, output),
        Command::Quantize { input, group, bits, codebook, compare, output } => {
            quantize::run(&input, group, bits, &codebook, compare, &output)
        }
        Command::Analyze { checkpoint, output, multimodal, text, kappa } => {
            analyze::run(&checkpoint, &output, multimodal, text, kappa)
        }
        Command::Report { metrics, output } => report::run(&metrics, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
