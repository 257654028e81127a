use crate::analysis::{CostReport, CostRow};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{BatchNorm, Conv, LayerNorm, Linear, Session};
use crate::mixer::InceptionMixer;
use crate::nn::{self, Conv2dSpec};
use crate::params::{Init, ParamId, ParamLayout, ParamStore, INIT_STD};
use crate::tensor::{Real, Tensor};

use super::config::{Embed, ModelConfig};
use super::ramp::{ramp_schedule, BlockPlan};

/// Pre-norm residual block: `x + s₁·ITM(LN(x))`, then `+ s₂·FFN(LN(·))`.
#[derive(Debug, Clone)]
pub struct IFormerBlock {
    pub path: String,
    pub plan: BlockPlan,
    pub norm1: LayerNorm,
    pub mixer: InceptionMixer,
    pub ls1: Option<ParamId>,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub ls2: Option<ParamId>,
}

impl IFormerBlock {
    pub fn new(
        layout: &mut ParamLayout,
        path: &str,
        plan: BlockPlan,
        high_branches: crate::mixer::HighBranches,
    ) -> Result<Self> {
        if plan.ffn_hidden == 0 {
            return Err(Error::Config(format!("{path}: ffn_hidden must be positive")));
        }
        let c = plan.channels;
        let mixer = InceptionMixer::new(layout, &format!("{path}.mixer"), plan.mixer_config(high_branches))
            .map_err(|e| Error::Config(format!("{path}: {e}")))?;
        let scale = |name: &str, layout: &mut ParamLayout| {
            plan.layerscale_init.map(|v| layout.add(format!("{path}.{name}"), &[c], Init::Const(v)))
        };
        let norm1 = LayerNorm::new(layout, &format!("{path}.norm1"), c);
        let ls1 = scale("ls1", layout);
        let norm2 = LayerNorm::new(layout, &format!("{path}.norm2"), c);
        let fc1 = Linear::new(layout, &format!("{path}.ffn.fc1"), c, plan.ffn_hidden);
        let fc2 = Linear::new(layout, &format!("{path}.ffn.fc2"), plan.ffn_hidden, c);
        let ls2 = scale("ls2", layout);
        Ok(Self { path: path.to_string(), plan, norm1, mixer, ls1, norm2, fc1, fc2, ls2 })
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let scaled = |v: Var<'t, T>, ls: Option<ParamId>| match ls {
            Some(id) => v.mul(s.param(id)),
            None => Ok(v),
        };
        s.tap(&format!("{}.input", self.path), x);
        let mixed = self.mixer.forward(s, self.norm1.forward(s, x)?)?;
        let y = x.add(scaled(mixed, self.ls1)?)?;
        let hidden = nn::gelu(self.fc1.forward(s, self.norm2.forward(s, y)?)?);
        let out = y.add(scaled(self.fc2.forward(s, hidden)?, self.ls2)?)?;
        s.tap(&self.path, out);
        Ok(out)
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) {
        let locations = h * w;
        self.norm1.cost(rows);
        self.mixer.cost(h, w, rows);
        self.norm2.cost(rows);
        self.fc1.cost(locations, rows);
        self.fc2.cost(locations, rows);
        for (name, ls) in [("ls1", self.ls1), ("ls2", self.ls2)] {
            if ls.is_some() {
                let params = self.plan.channels as u64;
                rows.push(CostRow { path: format!("{}.{name}", self.path), params, flops: 0 });
            }
        }
    }
}

/// Two 3×3 stride-2 convolutions with batch norm, then a positional embedding.
#[derive(Debug, Clone)]
pub struct Stem {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub pos_embed: ParamId,
    pub grid: usize,
    pub channels: usize,
}

impl Stem {
    pub fn new(layout: &mut ParamLayout, path: &str, channels: usize, input_size: usize) -> Self {
        let mid = (channels / 2).max(1);
        let spec = Conv2dSpec { stride: 2, padding: 1 };
        let conv1 = Conv::new(layout, &format!("{path}.conv1"), 3, 3, mid, spec, false);
        let bn1 = BatchNorm::new(layout, &format!("{path}.bn1"), mid);
        let conv2 = Conv::new(layout, &format!("{path}.conv2"), 3, mid, channels, spec, false);
        let bn2 = BatchNorm::new(layout, &format!("{path}.bn2"), channels);
        let grid = input_size / 4;
        let pos_embed = layout.add(
            format!("{path}.pos_embed"),
            &[grid, grid, channels],
            Init::TruncNormal(INIT_STD),
        );
        Self { conv1, bn1, conv2, bn2, pos_embed, grid, channels }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, h, w, c) = x.value().dims4()?;
        if c != 3 {
            return dim_err(format!("stem expects 3 input channels, got {c}"));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return dim_err(format!("stem input {h}x{w} not divisible by 4"));
        }
        if h / 4 != self.grid || w / 4 != self.grid {
            return dim_err(format!(
                "input {h}x{w} does not match the positional embedding grid {0}x{0} (input size {1})",
                self.grid,
                self.grid * 4
            ));
        }
        let y = nn::gelu(self.bn1.forward(s, self.conv1.forward(s, x)?)?);
        let y = self.bn2.forward(s, self.conv2.forward(s, y)?)?;
        y.add(s.param(self.pos_embed))
    }

    pub fn cost(&self, input: usize, rows: &mut Vec<CostRow>) {
        let half = input / 2;
        self.conv1.cost(half, half, rows);
        self.bn1.cost(rows);
        self.conv2.cost(half / 2, half / 2, rows);
        self.bn2.cost(rows);
        let pos = (self.grid * self.grid * self.channels) as u64;
        rows.push(CostRow { path: format!("{}.pos_embed", path_of(&self.conv1.path)), params: pos, flops: 0 });
    }
}

fn path_of(child: &str) -> &str {
    child.rsplit_once('.').map_or(child, |(p, _)| p)
}

/// 2×2 stride-2 convolution followed by layer norm.
#[derive(Debug, Clone)]
pub struct Downsample {
    pub conv: Conv,
    pub norm: LayerNorm,
}

impl Downsample {
    pub fn new(layout: &mut ParamLayout, path: &str, c_in: usize, c_out: usize) -> Self {
        let spec = Conv2dSpec { stride: 2, padding: 0 };
        Self {
            conv: Conv::new(layout, &format!("{path}.conv"), 2, c_in, c_out, spec, true),
            norm: LayerNorm::new(layout, &format!("{path}.norm"), c_out),
        }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, h, w, _) = x.value().dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err(format!("downsample needs even spatial dims, got {h}x{w}"));
        }
        self.norm.forward(s, self.conv.forward(s, x)?)
    }

    pub fn cost(&self, out: usize, rows: &mut Vec<CostRow>) {
        self.conv.cost(out, out, rows);
        self.norm.cost(rows);
    }
}

#[derive(Debug, Clone)]
pub enum StageEmbed {
    Stem(Stem),
    Down(Downsample),
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub path: String,
    pub embed: StageEmbed,
    pub blocks: Vec<IFormerBlock>,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub norm: LayerNorm,
    pub fc: Linear,
}

/// An executable iFormer. Parameters live outside, in a [`ParamStore`]
/// laid out by `layout`.
#[derive(Debug, Clone)]
pub struct IFormer {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub stages: Vec<Stage>,
    pub head: Head,
}

/// Per-stage block plans from the config's ramps.
pub fn default_plans(config: &ModelConfig) -> Result<Vec<Vec<BlockPlan>>> {
    config
        .stages
        .iter()
        .enumerate()
        .map(|(i, st)| {
            ramp_schedule(st, config.head_dim, config.layerscale_init)
                .map_err(|e| Error::Config(format!("stage{}: {e}", i + 1)))
        })
        .collect()
}

impl IFormer {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::with_plans(config, default_plans(config)?)
    }

    /// Builds with explicit block plans, bypassing the ramp scheduler. Plans
    /// must still satisfy the mixer invariants.
    pub fn with_plans(config: &ModelConfig, plans: Vec<Vec<BlockPlan>>) -> Result<Self> {
        if plans.len() != config.stages.len() {
            return Err(Error::Config(format!(
                "{} block plan lists for {} stages",
                plans.len(),
                config.stages.len()
            )));
        }
        let mut layout = ParamLayout::new();
        let mut stages = Vec::with_capacity(plans.len());
        let mut c_prev = 3;
        for (i, (st, stage_plans)) in config.stages.iter().zip(plans).enumerate() {
            let path = format!("stage{}", i + 1);
            let embed = match ModelConfig::embed(i) {
                Embed::Stem => StageEmbed::Stem(Stem::new(&mut layout, &format!("{path}.stem"), st.channels, config.input_size)),
                Embed::Downsample => {
                    StageEmbed::Down(Downsample::new(&mut layout, &format!("{path}.down"), c_prev, st.channels))
                }
            };
            let mut blocks = Vec::with_capacity(stage_plans.len());
            for (j, plan) in stage_plans.into_iter().enumerate() {
                if plan.channels != st.channels {
                    return Err(Error::Config(format!(
                        "{path}.block{j}: plan has {} channels, stage has {}",
                        plan.channels, st.channels
                    )));
                }
                blocks.push(IFormerBlock::new(&mut layout, &format!("{path}.block{j}"), plan, config.high_branches)?);
            }
            stages.push(Stage { path, embed, blocks });
            c_prev = st.channels;
        }
        let head = Head {
            norm: LayerNorm::new(&mut layout, "head.norm", c_prev),
            fc: Linear::new(&mut layout, "head.fc", c_prev, config.num_classes),
        };
        Ok(Self { config: config.clone(), layout, stages, head })
    }

    pub fn plans(&self) -> Vec<Vec<BlockPlan>> {
        self.stages.iter().map(|s| s.blocks.iter().map(|b| b.plan).collect()).collect()
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        self.layout.materialize(seed)
    }

    /// Stage outputs at 1/4, 1/8, 1/16 and 1/32 resolution.
    pub fn forward_features<'t, T: Real>(&self, s: &Session<'t, T>, image: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        self.check_input(&image.value())?;
        let mut x = image;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = match &stage.embed {
                StageEmbed::Stem(stem) => stem.forward(s, x)?,
                StageEmbed::Down(down) => down.forward(s, x)?,
            };
            for block in &stage.blocks {
                x = block.forward(s, x)?;
            }
            s.tap(&stage.path, x);
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn forward_classify<'t, T: Real>(&self, s: &Session<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let features = self.forward_features(s, image)?;
        let last = *features.last().expect("four stages");
        self.apply_head(s, last)
    }

    /// Global token average, layer norm, linear.
    pub fn apply_head<'t, T: Real>(&self, s: &Session<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        let (b, h, w, c) = features.value().dims4()?;
        let pooled = features.reshape(&[b, h * w, c])?.mean_tokens()?;
        self.head.fc.forward(s, self.head.norm.forward(s, pooled)?)
    }

    fn check_input<T: Real>(&self, image: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = image.dims4()?;
        if c != 3 {
            return dim_err(format!("image must have 3 channels, got {c}"));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return dim_err(format!("image {h}x{w} not divisible by 32"));
        }
        Ok(())
    }

    /// Inference-mode logits.
    pub fn classify<T: Real>(&self, params: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let s = Session::new(&tape, &self.layout, params, false);
        let logits = self.forward_classify(&s, tape.constant(image.clone()))?;
        Ok((*logits.value()).clone())
    }

    /// Inference-mode stage outputs.
    pub fn features<T: Real>(&self, params: &ParamStore<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let tape = Tape::inference();
        let s = Session::new(&tape, &self.layout, params, false);
        let outs = self.forward_features(&s, tape.constant(image.clone()))?;
        Ok(outs.iter().map(|v| (*v.value()).clone()).collect())
    }

    /// Inference-mode activations whose path starts with `prefix`, e.g.
    /// `"stage3.block0.mixer.attention"`, in evaluation order.
    pub fn probe<T: Real>(
        &self,
        params: &ParamStore<T>,
        image: &Tensor<T>,
        prefix: &str,
    ) -> Result<Vec<(String, Tensor<T>)>> {
        let tape = Tape::inference();
        let s = Session::new(&tape, &self.layout, params, false).with_capture(prefix);
        self.forward_features(&s, tape.constant(image.clone()))?;
        Ok(s.take_captured())
    }

    /// Per-layer parameter and multiply-accumulate counts at `input_size`.
    pub fn cost(&self, input_size: usize) -> CostReport {
        let mut rows = Vec::new();
        let mut size = input_size;
        for stage in &self.stages {
            match &stage.embed {
                StageEmbed::Stem(stem) => {
                    stem.cost(size, &mut rows);
                    size /= 4;
                }
                StageEmbed::Down(down) => {
                    size /= 2;
                    down.cost(size, &mut rows);
                }
            }
            for block in &stage.blocks {
                block.cost(size, size, &mut rows);
            }
        }
        self.head.norm.cost(&mut rows);
        self.head.fc.cost(1, &mut rows);
        CostReport { input_size, rows }
    }
}

/// Builds the model for `config` and initializes its parameters from `seed`.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<(IFormer, ParamStore<T>)> {
    let model = IFormer::new(config)?;
    let params = model.init_params(seed);
    Ok((model, params))
}
