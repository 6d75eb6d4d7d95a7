//! `tactile`: generate data, train, evaluate, export, and run ablations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// A validation failure: bad flags, missing paths, schema violations.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "tactile", version, about = "Touch encoder alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-sensor dataset directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a touch encoder and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's sigma.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Train the flag ablations and sigma sweep over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// First seed; the grid uses as many consecutive seeds as configured.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "This feels like [CLS]")]
        template: String,
    },
    /// Write touch embeddings of one split as an embedding table.
    ExportEmbeddings {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Print a checkpoint's sensor prototypes; with --data, also how often
    /// they resolve each split's images to the true sensor.
    Prototypes {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct EvalTarget {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Score embeddings exported by `export-embeddings` instead of encoding.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Zero-shot material classification with a prompt template.
    ZeroShot {
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long, default_value = "This feels like [CLS]")]
        template: String,
    },
    /// Zero-shot grasp stability prediction.
    Grasp {
        #[command(flatten)]
        target: EvalTarget,
    },
    /// Linear probe trained on the train split, scored on --split.
    Probe {
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Touch-to-X retrieval mAP.
    Retrieval {
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long, value_enum, default_value_t = ModalityArg::Vision)]
        modality: ModalityArg,
        /// Prompt template for the text gallery.
        #[arg(long, default_value = "This feels like [CLS]")]
        template: String,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModalityArg {
    Vision,
    Text,
    Audio,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tactile_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite(_) => 2,
                E::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
