//! Parameterized layers: each declares its tensors in a [`ParamLayout`],
//! runs a forward pass against a [`Session`], and reports its own cost.

use std::cell::RefCell;

use crate::analysis::CostRow;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::{self, Conv2dSpec, LinearParams, MsaParams};
use crate::params::{Bound, Init, ParamId, ParamLayout, ParamStore, INIT_STD};
use crate::tensor::{Real, Tensor};

/// One forward pass: bound parameters plus mode flags and side channels.
pub struct Session<'t, T: Real> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    training: bool,
    stat_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    capture_prefix: Option<String>,
    captured: RefCell<Vec<(String, Tensor<T>)>>,
}

impl<'t, T: Real> Session<'t, T> {
    pub fn new(tape: &'t Tape<T>, layout: &ParamLayout, store: &ParamStore<T>, training: bool) -> Self {
        Self {
            tape,
            vars: Bound::new(tape, layout, store).vars,
            training,
            stat_updates: RefCell::new(Vec::new()),
            capture_prefix: None,
            captured: RefCell::new(Vec::new()),
        }
    }

    /// Uses `vars` (indexed like the layout) as the parameters.
    pub fn from_vars(tape: &'t Tape<T>, vars: Vec<Var<'t, T>>, training: bool) -> Self {
        Self {
            tape,
            vars,
            training,
            stat_updates: RefCell::new(Vec::new()),
            capture_prefix: None,
            captured: RefCell::new(Vec::new()),
        }
    }

    /// Records every tapped activation whose path starts with `prefix`.
    pub fn with_capture(mut self, prefix: impl Into<String>) -> Self {
        self.capture_prefix = Some(prefix.into());
        self
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id]
    }

    pub fn params(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn tap(&self, path: &str, var: Var<'t, T>) {
        if let Some(prefix) = &self.capture_prefix {
            if path.starts_with(prefix.as_str()) {
                self.captured.borrow_mut().push((path.to_string(), (*var.value()).clone()));
            }
        }
    }

    pub fn take_captured(&self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut *self.captured.borrow_mut())
    }

    /// New values for buffers (running statistics) produced in training mode.
    pub fn take_stat_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.stat_updates.borrow_mut())
    }
}

fn row(path: &str, params: u64, flops: u64) -> CostRow {
    CostRow { path: path.to_string(), params, flops }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub path: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, path: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            path: path.to_string(),
            weight: layout.add(format!("{path}.weight"), &[c_in, c_out], Init::TruncNormal(INIT_STD)),
            bias: layout.add(format!("{path}.bias"), &[c_out], Init::Const(0.0)),
            c_in,
            c_out,
        }
    }

    pub fn bind<'t, T: Real>(&self, s: &Session<'t, T>) -> LinearParams<'t, T> {
        LinearParams { weight: s.param(self.weight), bias: s.param(self.bias) }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nn::linear(x, &self.bind(s))
    }

    pub fn cost(&self, locations: usize, rows: &mut Vec<CostRow>) {
        let params = (self.c_in * self.c_out + self.c_out) as u64;
        rows.push(row(&self.path, params, (self.c_in * self.c_out * locations) as u64));
    }
}

#[derive(Debug, Clone)]
pub struct DwConv3x3 {
    pub path: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl DwConv3x3 {
    pub fn new(layout: &mut ParamLayout, path: &str, channels: usize) -> Self {
        Self {
            path: path.to_string(),
            kernel: layout.add(format!("{path}.kernel"), &[3, 3, channels], Init::TruncNormal(INIT_STD)),
            bias: layout.add(format!("{path}.bias"), &[channels], Init::Const(0.0)),
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nn::depthwise_conv3x3(x, s.param(self.kernel), s.param(self.bias))
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) {
        let params = (10 * self.channels) as u64;
        rows.push(row(&self.path, params, (9 * self.channels * h * w) as u64));
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub path: String,
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub spec: Conv2dSpec,
}

impl Conv {
    pub fn new(
        layout: &mut ParamLayout,
        path: &str,
        size: usize,
        c_in: usize,
        c_out: usize,
        spec: Conv2dSpec,
        with_bias: bool,
    ) -> Self {
        let kernel =
            layout.add(format!("{path}.kernel"), &[size, size, c_in, c_out], Init::TruncNormal(INIT_STD));
        let bias = with_bias.then(|| layout.add(format!("{path}.bias"), &[c_out], Init::Const(0.0)));
        Self { path: path.to_string(), kernel, bias, size, c_in, c_out, spec }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nn::conv2d(x, s.param(self.kernel), self.bias.map(|b| s.param(b)), self.spec)
    }

    pub fn out_size(&self, size: usize) -> usize {
        nn::conv_out_size(size, self.size, self.spec).unwrap_or(0)
    }

    pub fn cost(&self, h_out: usize, w_out: usize, rows: &mut Vec<CostRow>) {
        let weights = self.size * self.size * self.c_in * self.c_out;
        let params = (weights + if self.bias.is_some() { self.c_out } else { 0 }) as u64;
        rows.push(row(&self.path, params, (weights * h_out * w_out) as u64));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub path: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, path: &str, channels: usize) -> Self {
        Self {
            path: path.to_string(),
            gamma: layout.add(format!("{path}.gamma"), &[channels], Init::Const(1.0)),
            beta: layout.add(format!("{path}.beta"), &[channels], Init::Const(0.0)),
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nn::layer_norm(x, s.param(self.gamma), s.param(self.beta), nn::LN_EPS)
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        rows.push(row(&self.path, (2 * self.channels) as u64, 0));
    }
}

/// Running statistics momentum (weight of the newest batch).
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub path: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(layout: &mut ParamLayout, path: &str, channels: usize) -> Self {
        Self {
            path: path.to_string(),
            gamma: layout.add(format!("{path}.gamma"), &[channels], Init::Const(1.0)),
            beta: layout.add(format!("{path}.beta"), &[channels], Init::Const(0.0)),
            running_mean: layout.buffer(format!("{path}.running_mean"), &[channels], Init::Const(0.0)),
            running_var: layout.buffer(format!("{path}.running_var"), &[channels], Init::Const(1.0)),
            channels,
        }
    }

    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (rm, rv) = (s.param(self.running_mean).value(), s.param(self.running_var).value());
        let (y, stats) =
            nn::batch_norm(x, s.param(self.gamma), s.param(self.beta), &rm, &rv, s.training())?;
        if let Some(stats) = stats {
            let m = T::of(BN_MOMENTUM);
            let blend = |old: &Tensor<T>, new: &Tensor<T>| {
                old.zip_map(new, |o, n| (T::one() - m) * o + m * n).expect("same shape")
            };
            let mut updates = s.stat_updates.borrow_mut();
            updates.push((self.running_mean, blend(&rm, &stats.mean)));
            updates.push((self.running_var, blend(&rv, &stats.var)));
        }
        Ok(y)
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        rows.push(row(&self.path, (2 * self.channels) as u64, 0));
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub path: String,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub channels: usize,
    pub heads: usize,
}

impl Attention {
    pub fn new(layout: &mut ParamLayout, path: &str, channels: usize, heads: usize) -> Self {
        let c = channels;
        let mut w = |n: &str| layout.add(format!("{path}.{n}"), &[c, c], Init::TruncNormal(INIT_STD));
        let (w_q, w_k, w_v, w_o) = (w("w_q"), w("w_k"), w("w_v"), w("w_o"));
        let mut b = |n: &str| layout.add(format!("{path}.{n}"), &[c], Init::Const(0.0));
        let (b_q, b_v, b_o) = (b("b_q"), b("b_v"), b("b_o"));
        Self { path: path.to_string(), w_q, b_q, w_k, w_v, b_v, w_o, b_o, channels, heads }
    }

    pub fn bind<'t, T: Real>(&self, s: &Session<'t, T>) -> MsaParams<'t, T> {
        MsaParams {
            w_q: s.param(self.w_q),
            b_q: s.param(self.b_q),
            w_k: s.param(self.w_k),
            w_v: s.param(self.w_v),
            b_v: s.param(self.b_v),
            w_o: s.param(self.w_o),
            b_o: s.param(self.b_o),
            heads: self.heads,
        }
    }

    /// `x: [B, N, C]`.
    pub fn forward<'t, T: Real>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        nn::msa(x, &self.bind(s))
    }

    /// Four projections over `tokens` plus logits and the weighted sum.
    pub fn cost(&self, tokens: usize, rows: &mut Vec<CostRow>) {
        let c = self.channels;
        let params = (4 * c * c + 3 * c) as u64;
        let flops = (4 * tokens * c * c + 2 * tokens * tokens * c) as u64;
        rows.push(row(&self.path, params, flops));
    }
}
