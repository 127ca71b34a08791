//! `voxalign`: phantom generation, dataset synthesis, training, evaluation
//! and one-shot registration.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use voxalign::nets::ArchKind;

use config::Overrides;

#[derive(Parser, Debug)]
#[command(
    name = "voxalign",
    version,
    about = "Rigid 3D volume registration with Siamese encoder-decoder networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for model initialization and data synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Architecture: me, se, sed, snl-sed or dnet.
    #[arg(long, global = true)]
    arch: Option<ArchKind>,
    /// Use the 16³ desk-scale preset for the chosen architecture.
    #[arg(long, global = true)]
    toy: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            arch: self.arch,
            toy: self.toy,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate seeded phantoms and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output folder.
        #[arg(long)]
        out: PathBuf,
        /// Number of subjects.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Edge length in voxels.
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Subject id of the first phantom (keeps folders disjoint).
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        /// Also write a contrast-enhanced variant of each subject.
        #[arg(long)]
        contrast: bool,
    },
    /// Synthesize transformed train/test pairs from generated folders.
    MakePairs {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the rotation and translation sweeps (and the test pairs, if any).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (defaults to the run's checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the ground-truth oracle instead of a trained model.
        #[arg(long)]
        oracle: bool,
    },
    /// Register one moving volume to a fixed volume.
    Register {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Output prefix: writes `<out>.json` and `<out>.vol`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter count and the effective configuration.
    Info {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VOXALIGN_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("VOXALIGN_THREADS={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::Gen {
            common,
            out,
            n,
            size,
            first_id,
            contrast,
        } => commands::gen(&out, n, size, first_id, contrast, common.seed.unwrap_or(0)),
        Command::MakePairs { common } => commands::make_pairs(&common.load()?),
        Command::Train { common, resume } => commands::train(&common.load()?, resume.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            oracle,
        } => commands::eval(&common.load()?, checkpoint.as_deref(), oracle),
        Command::Register {
            common,
            checkpoint,
            oracle,
            fixed,
            moving,
            out,
        } => commands::register(
            &common.load()?,
            checkpoint.as_deref(),
            oracle,
            &fixed,
            &moving,
            &out,
        ),
        Command::Info { common, checkpoint } => {
            commands::info(&common.load()?, checkpoint.as_deref())
        }
    }
}

impl Common {
    fn load(&self) -> Result<config::RunConfig> {
        config::RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}
