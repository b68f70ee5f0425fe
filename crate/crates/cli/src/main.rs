use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("CARGO_PKG_NAME"),
    ", f64 engine, EMOF container v1)"
);

#[derive(Parser)]
#[command(name = "emoformer", version, long_version = LONG_VERSION, about = "Speech emotion recognition with the EmoFormer network")]
struct Cli {
    /// Worker threads for per-clip extraction and augmentation.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Overwrite existing outputs instead of refusing.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audio file utilities.
    #[command(subcommand)]
    Audio(AudioCommand),
    /// Write augmented copies of every manifest entry.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON augmentation plan; defaults apply when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Feature extraction to EMOF files.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Run a full experiment and save the trained model.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a trained model on a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Classify one WAV file.
    Infer {
        #[arg(long)]
        model_dir: PathBuf,
        wav: PathBuf,
    },
    /// Model inspection.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Finite-difference gradient check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum AudioCommand {
    /// Resample a WAV file to a new rate.
    Resample {
        #[arg(long)]
        rate: u32,
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Args)]
struct ManifestOut {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// MFCC segments, one EMOF file per segment.
    Mfcc {
        #[command(flatten)]
        io: ManifestOut,
        /// JSON MFCC config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// One x-vector per clip.
    Xvector {
        #[command(flatten)]
        io: ManifestOut,
        /// X-vector weight file (see `features xvector-weights`).
        #[arg(long)]
        weights: PathBuf,
        /// JSON MFCC config for the frame-level input.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the deterministic seeded x-vector weight set.
    XvectorWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        input_dim: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Multiply-accumulate counts as JSON.
    Macs {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-layer shape chain as JSON.
    Shapes {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1\nremedy: pass --jobs N with N >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
