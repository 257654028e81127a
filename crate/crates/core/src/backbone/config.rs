use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mixer::HighBranches;

/// A fraction of a stage's heads, e.g. `3/10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadRatio {
    pub num: usize,
    pub den: usize,
}

impl HeadRatio {
    pub const fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }

    /// Number of heads this ratio selects out of `heads`, if integral.
    pub fn heads_of(&self, heads: usize) -> Option<usize> {
        let scaled = self.num * heads;
        (self.den > 0 && self.num <= self.den && scaled.is_multiple_of(self.den)).then(|| scaled / self.den)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for HeadRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for HeadRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| p.trim().parse::<usize>().ok();
        match s.split_once('/') {
            Some((n, d)) => match (parse(n), parse(d)) {
                (Some(num), Some(den)) if den > 0 => Ok(Self { num, den }),
                _ => Err(Error::Config(format!("invalid ratio {s:?}"))),
            },
            None => Err(Error::Config(format!("ratio {s:?} must look like \"3/10\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    /// Share of heads given to the high-frequency branches in the first block.
    pub high_ratio_start: HeadRatio,
    /// Same share in the last block; never above the start.
    pub high_ratio_end: HeadRatio,
    pub pool_stride: usize,
}

impl StageConfig {
    pub fn constant(depth: usize, channels: usize, heads: usize, high: HeadRatio, pool_stride: usize) -> Self {
        Self { depth, channels, heads, high_ratio_start: high, high_ratio_end: high, pool_stride }
    }
}

/// How a stage turns its input into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embed {
    /// Two 3×3 stride-2 convolutions (first stage).
    Stem,
    /// One 2×2 stride-2 convolution (later stages).
    Downsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub stages: Vec<StageConfig>,
    pub head_dim: usize,
    pub num_classes: usize,
    pub input_size: usize,
    pub layerscale_init: Option<f64>,
    pub high_branches: HighBranches,
}

pub const PRESETS: [&str; 4] = ["iformer-s", "iformer-b", "iformer-l", "iformer-micro"];

const fn r(num: usize, den: usize) -> HeadRatio {
    HeadRatio::new(num, den)
}

fn stage(depth: usize, channels: usize, heads: usize, start: HeadRatio, end: HeadRatio, pool_stride: usize) -> StageConfig {
    StageConfig { depth, channels, heads, high_ratio_start: start, high_ratio_end: end, pool_stride }
}

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let large = |stages: Vec<StageConfig>| Self {
            name: name.to_string(),
            stages,
            head_dim: 32,
            num_classes: 1000,
            input_size: 224,
            layerscale_init: Some(1e-6),
            high_branches: HighBranches::Both,
        };
        Ok(match name {
            "iformer-s" => large(vec![
                stage(3, 96, 3, r(2, 3), r(2, 3), 2),
                stage(3, 192, 6, r(1, 2), r(1, 2), 2),
                stage(9, 320, 10, r(3, 10), r(1, 10), 1),
                stage(3, 384, 12, r(1, 12), r(1, 12), 1),
            ]),
            "iformer-b" => large(vec![
                stage(4, 96, 3, r(2, 3), r(2, 3), 2),
                stage(6, 192, 6, r(1, 2), r(1, 2), 2),
                stage(14, 384, 12, r(4, 12), r(2, 12), 1),
                stage(6, 512, 16, r(1, 16), r(1, 16), 1),
            ]),
            "iformer-l" => large(vec![
                stage(4, 96, 3, r(2, 3), r(2, 3), 2),
                stage(6, 192, 6, r(1, 2), r(1, 2), 2),
                stage(18, 448, 14, r(4, 14), r(2, 14), 1),
                stage(8, 640, 20, r(1, 20), r(1, 20), 1),
            ]),
            "iformer-micro" => Self {
                name: name.to_string(),
                stages: vec![
                    stage(1, 16, 2, r(1, 2), r(1, 2), 2),
                    stage(1, 32, 4, r(1, 2), r(1, 2), 2),
                    stage(2, 48, 6, r(2, 6), r(1, 6), 1),
                    stage(1, 64, 8, r(1, 8), r(1, 8), 1),
                ],
                head_dim: 8,
                num_classes: 4,
                input_size: 32,
                layerscale_init: None,
                high_branches: HighBranches::Both,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; valid presets: {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn embed(stage: usize) -> Embed {
        if stage == 0 {
            Embed::Stem
        } else {
            Embed::Downsample
        }
    }

    /// Returns the first violated invariant, with its stage path.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stages.len() != 4 {
            return err(format!("expected 4 stages, got {}", self.stages.len()));
        }
        if self.head_dim == 0 || self.num_classes == 0 {
            return err("head_dim and num_classes must be positive".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return err(format!("input_size {} must be a positive multiple of 32", self.input_size));
        }
        let mut previous = 0;
        for (i, s) in self.stages.iter().enumerate() {
            let path = format!("stage{}", i + 1);
            if s.depth == 0 {
                return err(format!("{path}: depth must be positive"));
            }
            if s.channels <= previous {
                return err(format!("{path}: channels {} must exceed previous stage's {previous}", s.channels));
            }
            previous = s.channels;
            if s.channels % self.head_dim != 0 {
                return err(format!("{path}: channels {} not divisible by head_dim {}", s.channels, self.head_dim));
            }
            if s.heads * self.head_dim != s.channels {
                return err(format!(
                    "{path}: heads {} × head_dim {} != channels {}",
                    s.heads, self.head_dim, s.channels
                ));
            }
            if !matches!(s.pool_stride, 1 | 2) {
                return err(format!("{path}: pool_stride {} must be 1 or 2", s.pool_stride));
            }
            for (label, ratio) in [("high_ratio_start", s.high_ratio_start), ("high_ratio_end", s.high_ratio_end)] {
                if ratio.heads_of(s.heads).is_none() {
                    return err(format!("{path}: {label} {ratio} is not a whole number of {} heads", s.heads));
                }
            }
            if s.high_ratio_start.value() < s.high_ratio_end.value() {
                return err(format!(
                    "{path}: ramp must not increase C_h ({} -> {})",
                    s.high_ratio_start, s.high_ratio_end
                ));
            }
        }
        Ok(())
    }
}
