use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use voxalign::eval::SweepSpec;
use voxalign::nets::{ArchConfig, ArchKind};
use voxalign::synthgen::SynthConfig;
use voxalign::train::{LossConfig, TrainConfig};
use voxalign::volume::DEFAULT_DSC_TAU;

/// Which folder trains and which tests, and whether training sees the
/// contrast-enhanced volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    /// Train on all of A, test on B.
    S1,
    /// Train on all of B, test on A.
    S2,
    /// Train on non-contrast A, test on all of B.
    S3,
    /// Train on non-contrast B, test on all of A.
    S4,
}

impl Split {
    /// `(train folder, test folder, train includes contrast volumes)`.
    pub fn folders(self) -> (&'static str, &'static str, bool) {
        match self {
            Split::S1 => ("A", "B", true),
            Split::S2 => ("B", "A", true),
            Split::S3 => ("A", "B", false),
            Split::S4 => ("B", "A", false),
        }
    }
}

/// Where training pairs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Fresh phantoms and transforms generated per iteration.
    Online,
    /// Pairs written by `make-pairs`.
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/checkpoint.dnck`.
    pub checkpoint: Option<PathBuf>,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub synth: SynthConfig,
    pub sweep: SweepSpec,
    pub split: Split,
    pub source: Source,
    pub pairs_per_volume: usize,
    pub validation_pairs: usize,
    pub eval_volumes: usize,
    pub dsc_tau: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            output_dir: "run".into(),
            checkpoint: None,
            arch: ArchConfig::toy(ArchKind::Dnet),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            synth: SynthConfig::default(),
            sweep: SweepSpec::default(),
            split: Split::S1,
            source: Source::Online,
            pairs_per_volume: 8,
            validation_pairs: 20,
            eval_volumes: 2,
            dsc_tau: DEFAULT_DSC_TAU,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub arch: Option<ArchKind>,
    pub toy: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let kind = ov.arch.unwrap_or(cfg.arch.kind);
        if ov.toy {
            cfg.arch = ArchConfig::toy(kind).with_seed(cfg.arch.seed);
        } else if ov.arch.is_some() {
            cfg.arch = match path {
                Some(_) => {
                    let n_down = cfg.arch.sizes.len().saturating_sub(1);
                    let extra = n_down.saturating_sub(2).max(1);
                    ArchConfig::assemble(
                        kind,
                        cfg.arch.sizes.clone(),
                        cfg.arch.channels.clone(),
                        extra,
                        extra,
                    )
                }
                None => ArchConfig::full(kind),
            }
            .with_seed(cfg.arch.seed);
        }
        if let Some(seed) = ov.seed {
            cfg.arch.seed = seed;
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.synth.validate()?;
        self.sweep.validate()?;
        if !(0.0..=1.0).contains(&self.dsc_tau) {
            bail!("dsc_tau must be in [0, 1], got {}", self.dsc_tau);
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint.dnck"))
    }

    pub fn pairs_dir(&self) -> PathBuf {
        self.output_dir.join("pairs")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }
}
