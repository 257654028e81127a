//! Four-stage iFormer backbone: configs and presets, the frequency ramp,
//! the executable model and its end-to-end gradient check.

mod config;
mod gradcheck;
mod model;
mod ramp;

pub use config::{Embed, HeadRatio, ModelConfig, StageConfig, PRESETS};
pub use gradcheck::{
    gradcheck_model, gradcheck_params, GradcheckOptions, GradcheckReport, GroupError, INPUT_GROUP,
    MAX_GRADCHECK_PARAMS,
};
pub use model::{build_model, default_plans, Downsample, Head, IFormer, IFormerBlock, Stage, StageEmbed, Stem};
pub use ramp::{ramp_heads, ramp_schedule, BlockPlan};
