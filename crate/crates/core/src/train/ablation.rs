//! Mixer and ramp ablations on the micro preset.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{default_plans, BlockPlan, IFormer, ModelConfig};
use crate::error::{Error, Result};
use crate::mixer::HighBranches;

use super::dataset::FreqBandDataset;
use super::optim::AdamW;
use super::trainer::{evaluate, train, Accuracy, TrainState, BATCH_SIZE};

/// Classes whose gratings sit in the upper half of the spectrum.
pub const HIGH_BANDS: [usize; 2] = [2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AttentionOnly,
    AttentionMaxPool,
    Full,
    /// Share of high-frequency channels grows with depth.
    RampReversed,
    /// Half the heads high-frequency in every block.
    RampEqual,
    /// The default ramp; same model as `Full`.
    RampDefault,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::AttentionOnly,
        Variant::AttentionMaxPool,
        Variant::Full,
        Variant::RampReversed,
        Variant::RampEqual,
        Variant::RampDefault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AttentionOnly => "attn-only",
            Variant::AttentionMaxPool => "attn-maxpool",
            Variant::Full => "full",
            Variant::RampReversed => "ramp-reversed",
            Variant::RampEqual => "ramp-equal",
            Variant::RampDefault => "ramp-default",
        }
    }

    /// The micro model this variant trains.
    pub fn model(self) -> Result<IFormer> {
        let mut config = ModelConfig::preset("iformer-micro")?;
        let mut plans = default_plans(&config)?;
        let heads: Vec<usize> = config.stages.iter().map(|s| s.heads).collect();
        let set_high = |plan: &mut BlockPlan, high_heads: usize, stage_heads: usize, head_dim: usize| {
            plan.high_heads = high_heads;
            plan.high_channels = high_heads * head_dim;
            plan.low_channels = plan.channels - plan.high_channels;
            plan.low_heads = stage_heads - high_heads;
        };
        let head_dim = config.head_dim;
        match self {
            Variant::Full | Variant::RampDefault => {}
            Variant::AttentionMaxPool => config.high_branches = HighBranches::MaxPoolOnly,
            Variant::AttentionOnly => {
                for (stage, &h) in plans.iter_mut().zip(&heads) {
                    stage.iter_mut().for_each(|p| set_high(p, 0, h, head_dim));
                }
            }
            Variant::RampEqual => {
                for (stage, &h) in plans.iter_mut().zip(&heads) {
                    stage.iter_mut().for_each(|p| set_high(p, h / 2, h, head_dim));
                }
            }
            Variant::RampReversed => {
                // mirror the per-block high-frequency share along depth
                let ratios: Vec<f64> = plans
                    .iter()
                    .zip(&heads)
                    .flat_map(|(stage, &h)| stage.iter().map(move |p| p.high_heads as f64 / h as f64))
                    .collect();
                let mut mirrored = ratios.into_iter().rev();
                for (stage, &h) in plans.iter_mut().zip(&heads) {
                    for p in stage.iter_mut() {
                        let r = mirrored.next().expect("one ratio per block");
                        set_high(p, (r * h as f64 + 0.5).floor() as usize, h, head_dim);
                    }
                }
            }
        }
        IFormer::with_plans(&config, plans)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Usage(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
        })
    }
}

#[derive(Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub result: Result<Accuracy>,
}

/// Trains each variant for the same number of steps from the same seed.
/// A failing variant is recorded and the rest still run.
pub fn run_ablation(
    variants: &[Variant],
    train_set: &FreqBandDataset,
    test_set: &FreqBandDataset,
    steps: usize,
    seed: u64,
) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|&variant| {
            let result = (|| {
                let model = variant.model()?;
                let mut params = model.init_params::<f32>(seed);
                let mut state = TrainState::new(&model, AdamW::default(), seed);
                train(&model, &mut params, &mut state, train_set, steps, BATCH_SIZE)?;
                evaluate(&model, &params, test_set)
            })();
            AblationRow { variant, seed, steps, result }
        })
        .collect()
}
