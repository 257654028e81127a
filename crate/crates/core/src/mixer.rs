//! The Inception token mixer.
//!
//! Input channels are split as `[C_l | C_h/2 | C_h/2]`. The first slice goes
//! through pooled self-attention (low frequency), the second through
//! max-pool then linear, the third through linear then depthwise conv (high
//! frequency). Branch outputs are concatenated as `(Y_l, Y_h1, Y_h2)` and
//! fused by `FC(Y_c + DwConv(Y_c))`.

use crate::analysis::CostRow;
use crate::autodiff::Var;
use crate::error::{dim_err, Error, Result};
use crate::layers::{Attention, DwConv3x3, Linear, Session};
use crate::nn::{self, LinearParams, MsaParams};
use crate::params::ParamLayout;
use crate::tensor::Real;

/// Which high-frequency branches a mixer runs. `MaxPoolOnly` hands all of
/// `C_h` to the max-pool branch; it exists for the mixer ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HighBranches {
    #[default]
    Both,
    MaxPoolOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixerConfig {
    pub channels: usize,
    pub high_channels: usize,
    pub low_channels: usize,
    pub low_heads: usize,
    pub pool_stride: usize,
    pub high_branches: HighBranches,
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 {
            return bad("mixer needs at least one channel".into());
        }
        if self.high_channels + self.low_channels != self.channels {
            return bad(format!(
                "C_h + C_l = {} + {} != C = {}",
                self.high_channels, self.low_channels, self.channels
            ));
        }
        if self.high_branches == HighBranches::Both && !self.high_channels.is_multiple_of(2) {
            return bad(format!("C_h = {} must be even to split in halves", self.high_channels));
        }
        if self.low_channels > 0 && (self.low_heads == 0 || !self.low_channels.is_multiple_of(self.low_heads)) {
            return bad(format!(
                "C_l = {} not divisible by {} heads",
                self.low_channels, self.low_heads
            ));
        }
        if !matches!(self.pool_stride, 1 | 2) {
            return bad(format!("pool stride {} must be 1 or 2", self.pool_stride));
        }
        Ok(())
    }

    /// Widths `(C_l, pool branch, conv branch)`; always sum to `C`.
    pub fn split_widths(&self) -> (usize, usize, usize) {
        match self.high_branches {
            HighBranches::Both => {
                (self.low_channels, self.high_channels / 2, self.high_channels / 2)
            }
            HighBranches::MaxPoolOnly => (self.low_channels, self.high_channels, 0),
        }
    }
}

/// `FC(MaxPool(x))`.
pub fn high_pool_branch<'t, T: Real>(x: Var<'t, T>, fc: &LinearParams<'t, T>) -> Result<Var<'t, T>> {
    nn::linear(nn::max_pool3x3(x)?, fc)
}

/// `DwConv(FC(x))`: linear first, then depthwise conv.
pub fn high_conv_branch<'t, T: Real>(
    x: Var<'t, T>,
    fc: &LinearParams<'t, T>,
    dw_kernel: Var<'t, T>,
    dw_bias: Var<'t, T>,
) -> Result<Var<'t, T>> {
    nn::depthwise_conv3x3(nn::linear(x, fc)?, dw_kernel, dw_bias)
}

/// `Upsample(MSA(AvgPool(x)))` at pool stride 2, plain `MSA(x)` over all
/// `H·W` tokens at stride 1.
pub fn low_freq_branch<'t, T: Real>(
    x: Var<'t, T>,
    attn: &MsaParams<'t, T>,
    pool_stride: usize,
) -> Result<Var<'t, T>> {
    let (b, h, w, c) = x.value().dims4()?;
    match pool_stride {
        1 => nn::msa(x.reshape(&[b, h * w, c])?, attn)?.reshape(&[b, h, w, c]),
        2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return dim_err(format!("pool stride 2 needs even spatial dims, got {h}x{w}"));
            }
            let pooled = nn::avg_pool2x2_s2(x)?;
            let (hp, wp) = (h / 2, w / 2);
            let mixed = nn::msa(pooled.reshape(&[b, hp * wp, c])?, attn)?;
            nn::upsample_nearest2x(mixed.reshape(&[b, hp, wp, c])?)
        }
        s => Err(Error::Config(format!("pool stride {s} must be 1 or 2"))),
    }
}

/// `FC(y + DwConv(y))`.
pub fn fuse<'t, T: Real>(
    y: Var<'t, T>,
    dw_kernel: Var<'t, T>,
    dw_bias: Var<'t, T>,
    fc: &LinearParams<'t, T>,
) -> Result<Var<'t, T>> {
    let local = nn::depthwise_conv3x3(y, dw_kernel, dw_bias)?;
    nn::linear(y.add(local)?, fc)
}

/// Intermediate tensors of one mixer evaluation.
pub struct MixerTrace<'t, T: Real> {
    pub low_input: Option<Var<'t, T>>,
    pub pool_input: Option<Var<'t, T>>,
    pub conv_input: Option<Var<'t, T>>,
    pub attention: Option<Var<'t, T>>,
    pub maxpool: Option<Var<'t, T>>,
    pub dwconv: Option<Var<'t, T>>,
    pub concat: Var<'t, T>,
    pub output: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct InceptionMixer {
    pub path: String,
    pub config: MixerConfig,
    pub attn: Option<Attention>,
    pub pool_fc: Option<Linear>,
    pub conv_fc: Option<Linear>,
    pub conv_dw: Option<DwConv3x3>,
    pub fuse_dw: DwConv3x3,
    pub fuse_fc: Linear,
}

impl InceptionMixer {
    pub fn new(layout: &mut ParamLayout, path: &str, config: MixerConfig) -> Result<Self> {
        config.validate()?;
        let (c_l, c_pool, c_conv) = config.split_widths();
        let attn = (c_l > 0)
            .then(|| Attention::new(layout, &format!("{path}.attn"), c_l, config.low_heads));
        let pool_fc = (c_pool > 0).then(|| Linear::new(layout, &format!("{path}.pool_fc"), c_pool, c_pool));
        let conv_fc = (c_conv > 0).then(|| Linear::new(layout, &format!("{path}.conv_fc"), c_conv, c_conv));
        let conv_dw = (c_conv > 0).then(|| DwConv3x3::new(layout, &format!("{path}.conv_dw"), c_conv));
        let fuse_dw = DwConv3x3::new(layout, &format!("{path}.fuse_dw"), config.channels);
        let fuse_fc = Linear::new(layout, &format!("{path}.fuse_fc"), config.channels, config.channels);
        Ok(Self { path: path.to_string(), config, attn, pool_fc, conv_fc, conv_dw, fuse_dw, fuse_fc })
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(s, x)?.output)
    }

    pub fn trace<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<MixerTrace<'t, T>> {
        let c = x.value().last_dim();
        if c != self.config.channels {
            return dim_err(format!("{}: input has {c} channels, mixer expects {}", self.path, self.config.channels));
        }
        let (c_l, c_pool, c_conv) = self.config.split_widths();
        let widths: Vec<usize> = [c_l, c_pool, c_conv].into_iter().filter(|&w| w > 0).collect();
        let mut slices = x.split_channels(&widths)?.into_iter();
        let mut take = |w: usize| if w > 0 { slices.next() } else { None };
        let (low_input, pool_input, conv_input) = (take(c_l), take(c_pool), take(c_conv));

        let attention = match (&self.attn, low_input) {
            (Some(attn), Some(x_l)) => Some(low_freq_branch(x_l, &attn.bind(s), self.config.pool_stride)?),
            _ => None,
        };
        let maxpool = match (&self.pool_fc, pool_input) {
            (Some(fc), Some(x_h1)) => Some(high_pool_branch(x_h1, &fc.bind(s))?),
            _ => None,
        };
        let dwconv = match (&self.conv_fc, &self.conv_dw, conv_input) {
            (Some(fc), Some(dw), Some(x_h2)) => {
                Some(high_conv_branch(x_h2, &fc.bind(s), s.param(dw.kernel), s.param(dw.bias))?)
            }
            _ => None,
        };
        for (name, branch) in [("attention", attention), ("maxpool", maxpool), ("dwconv", dwconv)] {
            if let Some(v) = branch {
                s.tap(&format!("{}.{name}", self.path), v);
            }
        }
        let parts: Vec<_> = [attention, maxpool, dwconv].into_iter().flatten().collect();
        let concat = s.tape().concat_channels(&parts)?;
        let output = fuse(concat, s.param(self.fuse_dw.kernel), s.param(self.fuse_dw.bias), &self.fuse_fc.bind(s))?;
        Ok(MixerTrace { low_input, pool_input, conv_input, attention, maxpool, dwconv, concat, output })
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) {
        let locations = h * w;
        if let Some(attn) = &self.attn {
            let tokens = locations / (self.config.pool_stride * self.config.pool_stride);
            attn.cost(tokens, rows);
        }
        if let Some(fc) = &self.pool_fc {
            fc.cost(locations, rows);
        }
        if let Some(fc) = &self.conv_fc {
            fc.cost(locations, rows);
        }
        if let Some(dw) = &self.conv_dw {
            dw.cost(h, w, rows);
        }
        self.fuse_dw.cost(h, w, rows);
        self.fuse_fc.cost(locations, rows);
    }
}
