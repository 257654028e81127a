//! Frequency ramp: per-block split of a stage's heads between the
//! high-frequency and low-frequency mixers.

use crate::error::{Error, Result};
use crate::mixer::{HighBranches, MixerConfig};

use super::config::StageConfig;

/// Resolved channel split of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPlan {
    pub channels: usize,
    pub high_heads: usize,
    pub high_channels: usize,
    pub low_channels: usize,
    pub low_heads: usize,
    pub pool_stride: usize,
    pub ffn_hidden: usize,
    pub layerscale_init: Option<f64>,
}

impl BlockPlan {
    pub fn mixer_config(&self, high_branches: HighBranches) -> MixerConfig {
        MixerConfig {
            channels: self.channels,
            high_channels: self.high_channels,
            low_channels: self.low_channels,
            low_heads: self.low_heads,
            pool_stride: self.pool_stride,
            high_branches,
        }
    }
}

/// High-frequency head count per block.
///
/// Block `i` of `d` gets `round(start + (end − start)·i/(d − 1))` heads,
/// rounding halves up, computed in integers. A single block uses `start`.
pub fn ramp_heads(start: usize, end: usize, depth: usize) -> Vec<usize> {
    if depth <= 1 {
        return vec![start; depth];
    }
    let span = depth - 1;
    let mut heads: Vec<usize> = (0..depth)
        .map(|i| {
            // start·span − (start − end)·i, divided by span with halves rounded up
            let scaled = (start * span) as i64 - (start as i64 - end as i64) * i as i64;
            ((2 * scaled + span as i64) / (2 * span as i64)) as usize
        })
        .collect();
    for i in 1..depth {
        heads[i] = heads[i].min(heads[i - 1]);
    }
    heads
}

pub fn ramp_schedule(
    stage: &StageConfig,
    head_dim: usize,
    layerscale_init: Option<f64>,
) -> Result<Vec<BlockPlan>> {
    let heads_of = |ratio: super::HeadRatio, label: &str| {
        ratio.heads_of(stage.heads).ok_or_else(|| {
            Error::Config(format!("{label} {ratio} is not a whole number of {} heads", stage.heads))
        })
    };
    let start = heads_of(stage.high_ratio_start, "high_ratio_start")?;
    let end = heads_of(stage.high_ratio_end, "high_ratio_end")?;
    if end > start {
        return Err(Error::Config(format!("ramp must not increase C_h: {start} -> {end} heads")));
    }
    Ok(ramp_heads(start, end, stage.depth)
        .into_iter()
        .map(|high_heads| {
            let high_channels = high_heads * head_dim;
            BlockPlan {
                channels: stage.channels,
                high_heads,
                high_channels,
                low_channels: stage.channels - high_channels,
                low_heads: stage.heads - high_heads,
                pool_stride: stage.pool_stride,
                ffn_hidden: 4 * stage.channels,
                layerscale_init,
            }
        })
        .collect())
}
