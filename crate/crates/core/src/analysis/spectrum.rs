use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::backbone::IFormer;
use crate::error::{dim_err, Error, Result};
use crate::layers::Session;
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::fourier::{fft2d, signed_frequency};

pub const DEFAULT_BINS: usize = 16;

/// Highest radial frequency on the centered grid, in cycles per pixel.
pub const MAX_RADIAL_FREQUENCY: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Share of spectral energy at zero frequency above which a report counts
/// as concentrated there. Zero-padded convolutions turn a constant map
/// into one with border transients, which keeps this below 1.
pub const DC_CONCENTRATION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBin {
    /// Lower and upper radial frequency, cycles per pixel.
    pub freq_lo: f64,
    pub freq_hi: f64,
    /// Mean radial frequency of the grid points in the bin.
    pub freq_mean: f64,
    pub points: usize,
    /// `log(1 + mean amplitude)`.
    pub log_amplitude: f64,
    /// Relative to the zero-frequency bin.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub map_shape: [usize; 2],
    pub requested_bins: usize,
    pub bins: Vec<SpectrumBin>,
    /// Indices of requested bins that held no grid point and were merged
    /// into their lower neighbour.
    pub merged: Vec<usize>,
    /// Highest bin minus lowest bin.
    pub delta_log_amplitude: f64,
    pub dc_energy_fraction: f64,
}

impl SpectrumReport {
    /// Mean `delta` over the top quarter of reported bins (at least one).
    pub fn top_quartile_delta(&self) -> f64 {
        let k = (self.bins.len() / 4).max(1);
        let top = &self.bins[self.bins.len() - k..];
        top.iter().map(|b| b.delta).sum::<f64>() / k as f64
    }

    /// Most energy at zero frequency and every other bin below the first.
    pub fn zero_frequency_concentrated(&self) -> bool {
        self.dc_energy_fraction > DC_CONCENTRATION && self.bins[1..].iter().all(|b| b.delta < 0.0)
    }
}

/// Radial profile of an amplitude map given in DFT order.
pub fn radial_profile(amplitude: &Tensor<f64>, n_bins: usize) -> Result<SpectrumReport> {
    if n_bins < 2 {
        return Err(Error::Usage(format!("radial_profile needs at least 2 bins, got {n_bins}")));
    }
    let &[h, w] = amplitude.shape() else {
        return dim_err(format!("radial_profile expects an [H, W] map, got {:?}", amplitude.shape()));
    };
    let width = MAX_RADIAL_FREQUENCY / n_bins as f64;
    let mut sum = vec![0.0; n_bins];
    let mut freq = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for y in 0..h {
        let fy = signed_frequency(y, h);
        for x in 0..w {
            let r = fy.hypot(signed_frequency(x, w));
            let bin = ((r / width) as usize).min(n_bins - 1);
            sum[bin] += amplitude.data()[y * w + x];
            freq[bin] += r;
            count[bin] += 1;
        }
    }

    let mut bins: Vec<SpectrumBin> = Vec::new();
    let mut merged = Vec::new();
    for i in 0..n_bins {
        let hi = (i + 1) as f64 * width;
        match (count[i], bins.last_mut()) {
            (0, Some(prev)) => {
                prev.freq_hi = hi;
                merged.push(i);
            }
            _ => bins.push(SpectrumBin {
                freq_lo: i as f64 * width,
                freq_hi: hi,
                freq_mean: freq[i] / count[i] as f64,
                points: count[i],
                log_amplitude: (sum[i] / count[i] as f64).ln_1p(),
                delta: 0.0,
            }),
        }
    }
    let base = bins[0].log_amplitude;
    for b in &mut bins {
        b.delta = b.log_amplitude - base;
    }
    let delta_log_amplitude = bins[bins.len() - 1].log_amplitude - base;
    let energy: f64 = amplitude.data().iter().map(|a| a * a).sum();
    let dc = amplitude.data()[0] * amplitude.data()[0];
    Ok(SpectrumReport {
        map_shape: [h, w],
        requested_bins: n_bins,
        bins,
        merged,
        delta_log_amplitude,
        dc_energy_fraction: if energy > 0.0 { dc / energy } else { 0.0 },
    })
}

/// Mean DFT amplitude over every `[H, W]` map of a `[B, H, W, C]`
/// activation, each map first scaled to unit RMS.
pub fn mean_amplitude(features: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (b, h, w, c) = features.dims4()?;
    let mut acc = Tensor::<f64>::zeros(&[h, w]);
    let mut map = Tensor::<f64>::zeros(&[h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for (i, v) in map.data_mut().iter_mut().enumerate() {
                *v = features.data()[(bi * h * w + i) * c + ci];
            }
            let rms = (map.data().iter().map(|v| v * v).sum::<f64>() / (h * w) as f64).sqrt();
            if rms > 0.0 {
                map.data_mut().iter_mut().for_each(|v| *v /= rms);
            }
            acc.add_assign(&fft2d(&map)?.amplitude());
        }
    }
    let n = (b * c) as f64;
    Ok(acc.map(|v| v / n))
}

pub fn activation_spectrum(features: &Tensor<f64>, n_bins: usize) -> Result<SpectrumReport> {
    radial_profile(&mean_amplitude(features)?, n_bins)
}

/// Which activation of a block [`feature_spectrum`] measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The block's input.
    Input,
    Attention,
    MaxPool,
    DwConv,
    /// The block's output.
    Output,
}

impl Branch {
    pub const ALL: [Branch; 5] = [Branch::Input, Branch::Attention, Branch::MaxPool, Branch::DwConv, Branch::Output];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Input => "input",
            Branch::Attention => "attention",
            Branch::MaxPool => "maxpool",
            Branch::DwConv => "dwconv",
            Branch::Output => "output",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.name() == s || (s == "block-output" && *b == Branch::Output))
            .ok_or_else(|| {
                let names: Vec<_> = Branch::ALL.iter().map(|b| b.name()).collect();
                Error::Usage(format!("unknown branch {s:?}; valid branches: {}", names.join(", ")))
            })
    }
}

/// `stage` is 1-based, `block` 0-based, as in parameter paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selector {
    pub stage: usize,
    pub block: usize,
    pub branch: Branch,
}

impl Selector {
    pub fn block_path(&self) -> String {
        format!("stage{}.block{}", self.stage, self.block)
    }

    pub fn tap_path(&self) -> String {
        match self.branch {
            Branch::Input => format!("{}.input", self.block_path()),
            Branch::Output => self.block_path(),
            b => format!("{}.mixer.{}", self.block_path(), b.name()),
        }
    }
}

/// Every selector that names an existing activation of `model`.
pub fn valid_selectors(model: &IFormer) -> Vec<Selector> {
    let mut out = Vec::new();
    for (si, stage) in model.stages.iter().enumerate() {
        for (bi, block) in stage.blocks.iter().enumerate() {
            let mixer = &block.mixer;
            for branch in Branch::ALL {
                let present = match branch {
                    Branch::Attention => mixer.attn.is_some(),
                    Branch::MaxPool => mixer.pool_fc.is_some(),
                    Branch::DwConv => mixer.conv_fc.is_some(),
                    Branch::Input | Branch::Output => true,
                };
                if present {
                    out.push(Selector { stage: si + 1, block: bi, branch });
                }
            }
        }
    }
    out
}

/// Where [`feature_spectrum`]'s input enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feed {
    /// `[B, H, W, 3]` images through the whole trunk.
    Image,
    /// `[B, H, W, C]` activations straight into the selected block.
    Block,
}

/// Spectrum of one captured activation in inference mode.
pub fn feature_spectrum(
    model: &IFormer,
    params: &ParamStore<f64>,
    input: &Tensor<f64>,
    feed: Feed,
    selector: Selector,
    n_bins: usize,
) -> Result<SpectrumReport> {
    let valid = valid_selectors(model);
    if !valid.contains(&selector) {
        let paths: Vec<_> = valid.iter().map(|s| s.tap_path()).collect();
        return Err(Error::Usage(format!(
            "no activation {:?}; valid paths: {}",
            selector.tap_path(),
            paths.join(", ")
        )));
    }
    let target = selector.tap_path();
    let captured = match feed {
        Feed::Image => model.probe(params, input, &target)?,
        Feed::Block => {
            let block = &model.stages[selector.stage - 1].blocks[selector.block];
            let tape = Tape::inference();
            let s = Session::new(&tape, &model.layout, params, false).with_capture(target.clone());
            block.forward(&s, tape.constant(input.clone()))?;
            s.take_captured()
        }
    };
    let (_, features) = captured
        .into_iter()
        .find(|(path, _)| *path == target)
        .ok_or_else(|| Error::Usage(format!("activation {target:?} was not produced")))?;
    activation_spectrum(&features, n_bins)
}
