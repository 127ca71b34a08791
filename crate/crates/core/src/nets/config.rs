use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the compared architectures to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    /// Mixed encoder: both volumes concatenated into one branch.
    Me,
    /// Siamese encoder with a regression head.
    Se,
    /// Siamese encoder plus a decoder fed by skip connections.
    Sed,
    /// SED with self non-local links inside each branch.
    SnlSed,
    /// SED with mutual non-local links across the branches.
    Dnet,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Me,
        ArchKind::Se,
        ArchKind::Sed,
        ArchKind::SnlSed,
        ArchKind::Dnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Me => "me",
            ArchKind::Se => "se",
            ArchKind::Sed => "sed",
            ArchKind::SnlSed => "snl-sed",
            ArchKind::Dnet => "dnet",
        }
    }

    pub fn is_siamese(self) -> bool {
        self != ArchKind::Me
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, ArchKind::Sed | ArchKind::SnlSed | ArchKind::Dnet)
    }

    pub fn has_links(self) -> bool {
        matches!(self, ArchKind::SnlSed | ArchKind::Dnet)
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| {
                k.as_str().eq_ignore_ascii_case(s)
                    || (s.eq_ignore_ascii_case("snl_sed") && *k == ArchKind::SnlSed)
            })
            .ok_or_else(|| Error::BadConfig(format!("unknown architecture {s:?}")))
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture description: per-level spatial sizes and channel counts
/// (level 0 is the input volume), block counts and head widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub kind: ArchKind,
    /// `(d, h, w)` at each level, halving from one level to the next.
    pub sizes: Vec<[usize; 3]>,
    pub channels: Vec<usize>,
    pub n_down: usize,
    #[serde(default)]
    pub n_up: usize,
    #[serde(default)]
    pub n_link: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_head_out")]
    pub head_out: usize,
    #[serde(default = "default_true")]
    pub conv_bias: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_head_hidden() -> usize {
    128
}
fn default_head_out() -> usize {
    12
}
fn default_true() -> bool {
    true
}

fn halving(start: usize, levels: usize) -> Vec<[usize; 3]> {
    (0..levels).map(|i| [start >> i; 3]).collect()
}

impl ArchConfig {
    /// The published full-scale settings: 64³ inputs; SED family with six
    /// down blocks and channels (1,16,32,64,64,64,64); ME with four.
    pub fn full(kind: ArchKind) -> Self {
        match kind {
            ArchKind::Me => Self::assemble(kind, halving(64, 5), vec![1, 16, 32, 64, 128], 0, 0),
            _ => Self::assemble(kind, halving(64, 7), vec![1, 16, 32, 64, 64, 64, 64], 4, 4),
        }
    }

    /// Desk-scale 16³ configuration with the same 6/4/4 proportions
    /// (four down blocks, two up blocks, two links).
    pub fn toy(kind: ArchKind) -> Self {
        Self::assemble(kind, halving(16, 5), vec![1, 8, 16, 16, 16], 2, 2)
    }

    /// Fills kind-specific block counts from SED-family defaults.
    pub fn assemble(
        kind: ArchKind,
        sizes: Vec<[usize; 3]>,
        channels: Vec<usize>,
        n_up: usize,
        n_link: usize,
    ) -> Self {
        let n_down = sizes.len().saturating_sub(1);
        Self {
            kind,
            sizes,
            channels,
            n_down,
            n_up: if kind.has_decoder() { n_up } else { 0 },
            n_link: if kind.has_links() { n_link } else { 0 },
            head_hidden: default_head_hidden(),
            head_out: default_head_out(),
            conv_bias: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.sizes[0]
    }

    /// First down block carrying a link (1-based block index).
    pub fn first_linked_block(&self) -> usize {
        self.n_down + 1 - self.n_link
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.n_down == 0 {
            return bad("n_down must be at least 1".into());
        }
        if self.sizes.len() != self.n_down + 1 || self.channels.len() != self.n_down + 1 {
            return bad(format!(
                "{} down blocks need {} sizes and channels, got {} and {}",
                self.n_down,
                self.n_down + 1,
                self.sizes.len(),
                self.channels.len()
            ));
        }
        for (i, pair) in self.sizes.windows(2).enumerate() {
            for a in 0..3 {
                if pair[0][a] != 2 * pair[1][a] || pair[1][a] == 0 {
                    return bad(format!(
                        "sizes must halve each level: {:?} -> {:?} at level {i}",
                        pair[0], pair[1]
                    ));
                }
            }
        }
        if self.channels.contains(&0) || self.head_hidden == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.head_out != 12 {
            return bad(format!(
                "the regression head must output 12 values, got {}",
                self.head_out
            ));
        }
        match self.kind {
            ArchKind::Me | ArchKind::Se => {
                if self.n_up != 0 || self.n_link != 0 {
                    return bad(format!("{} has no decoder or links", self.kind));
                }
            }
            ArchKind::Sed => {
                if self.n_link != 0 {
                    return bad("sed has no links".into());
                }
            }
            ArchKind::SnlSed | ArchKind::Dnet => {
                if self.n_link == 0 || self.n_link > self.n_down {
                    return bad(format!("n_link must be in 1..={}", self.n_down));
                }
            }
        }
        if self.kind.has_decoder() && (self.n_up == 0 || self.n_up >= self.n_down) {
            return bad(format!("n_up must be in 1..{}", self.n_down));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
