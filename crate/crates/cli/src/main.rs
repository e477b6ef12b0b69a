//! `chimeramix` command-line entry point.

mod commands;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use chimeramix::config::MaskKind;
use chimeramix::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chimeramix", version, about = "Generative feature-mixing augmentation for small-data image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Grid,
    Seg,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Grid => MaskKind::Grid,
            MaskArg::Seg => MaskKind::Seg,
        }
    }
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset: cifair-small, stl-large or tiny-ci.
    #[arg(long)]
    preset: Option<String>,
    /// Seed of the per-class subsample.
    #[arg(long)]
    seed_split: Option<u64>,
    /// Seed of data order, pairing, masks and augmentation.
    #[arg(long)]
    seed_train: Option<u64>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the generator and discriminator; writes generator.ckpt and metrics.csv.
    TrainGenerator {
        #[command(flatten)]
        common: Common,
    },
    /// Write a PNG grid with one (first parent, second parent, chimera) row per sample.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of rows.
        #[arg(long, short = 'n', default_value_t = 8)]
        n: usize,
    },
    /// Train a classifier with chimera batch replacement, an ablation or no augmentation.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        /// Plain training without batch replacement.
        #[arg(long, conflicts_with_all = ["ablation", "generator"])]
        baseline: bool,
        /// Mix pixels directly instead of features.
        #[arg(long, value_enum, conflicts_with = "generator")]
        ablation: Option<MaskArg>,
        /// Generator checkpoint used for batch replacement.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Frechet distance between two datasets, or between chimeras and the training pool.
    Fid {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint; chimeras are compared with the training pool.
        #[arg(long, conflicts_with_all = ["a", "b"])]
        generator: Option<PathBuf>,
        /// First dataset (CIFAR binary file or image folder).
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        /// Second dataset.
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
    },
    /// Top-1 accuracy of a classifier checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Classifier checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test set; defaults to the configured one.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Write one region-overlay PNG per input image.
    SegmentPreview {
        #[command(flatten)]
        common: Common,
        /// Images to segment; defaults to the configured training subsample.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Divergence(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainGenerator { common } => commands::train_generator(&common),
        Command::Sample { common, checkpoint, n } => commands::sample(&common, &checkpoint, n),
        Command::TrainClassifier {
            common,
            baseline,
            ablation,
            generator,
        } => {
            let mode = match (baseline, ablation, generator) {
                (true, _, _) => Ok(commands::ClassifierMode::Baseline),
                (_, Some(m), _) => Ok(commands::ClassifierMode::Ablation(m.into())),
                (_, _, Some(p)) => Ok(commands::ClassifierMode::Generator(p)),
                _ => Err(Error::Config {
                    path: "train-classifier".into(),
                    message: "choose one of --baseline, --ablation grid|seg or --generator <ckpt>".into(),
                }),
            };
            mode.and_then(|m| commands::train_classifier(&common, m))
        }
        Command::Fid { common, generator, a, b } => commands::fid(&common, generator.as_deref(), a.zip(b)),
        Command::Eval { common, checkpoint, test } => commands::eval(&common, &checkpoint, test.as_deref()),
        Command::SegmentPreview { common, input } => commands::segment_preview(&common, input.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
