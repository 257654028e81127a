//! End-to-end gradient check of a whole model against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::gradcheck::{rel_error, DEFAULT_EPS};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::layers::Session;
use crate::params::{Init, ParamKind, ParamStore, INIT_STD};
use crate::tensor::Tensor;

use super::model::IFormer;

/// Refuse models larger than this; every sampled element costs two forwards.
pub const MAX_GRADCHECK_PARAMS: u64 = 1_000_000;

/// Name of the pseudo-group holding the input image gradient.
pub const INPUT_GROUP: &str = "input";

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub batch: usize,
    pub samples_per_group: usize,
    /// Standard deviation used in place of the regular weight init, so
    /// that attention logits and gradients are far from degenerate.
    pub weight_std: f64,
    pub eps: f64,
    pub seed: u64,
    /// Scales the analytic gradient of this group by 1.01; the negative
    /// control for the checker itself.
    pub sabotage: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { batch: 2, samples_per_group: 3, weight_std: 0.3, eps: DEFAULT_EPS, seed: 0, sabotage: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&GroupError> {
        // NaN errors count as failures
        self.groups.iter().filter(|g| g.max_rel_error.partial_cmp(&tolerance) != Some(std::cmp::Ordering::Less)).collect()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.failures(tolerance).is_empty()
    }
}

/// Parameters for the check: rescaled weights, jittered biases and affines.
pub fn gradcheck_params(model: &IFormer, opts: &GradcheckOptions) -> ParamStore<f64> {
    let mut params = model.init_params::<f64>(opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    for (id, spec) in model.layout.specs().iter().enumerate() {
        if spec.kind != ParamKind::Trainable {
            continue;
        }
        let t = params.by_index_mut(id);
        match spec.init {
            Init::TruncNormal(_) => t.data_mut().iter_mut().for_each(|v| *v *= opts.weight_std / INIT_STD),
            Init::Const(_) => t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1)),
        }
    }
    params
}

pub fn gradcheck_model(model: &IFormer, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let n = model.layout.num_trainable();
    if n > MAX_GRADCHECK_PARAMS {
        return Err(Error::Config(format!(
            "{} has {n} parameters; gradcheck is limited to {MAX_GRADCHECK_PARAMS}",
            model.config.name
        )));
    }
    if let Some(name) = &opts.sabotage {
        if name != INPUT_GROUP && model.layout.id(name).is_none() {
            return Err(Error::Usage(format!("no parameter group {name:?} to sabotage")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let size = model.config.input_size;
    let image = Tensor::<f64>::from_fn(&[opts.batch, size, size, 3], |_| StandardNormal.sample(&mut rng));
    let params = gradcheck_params(model, opts);
    let out_shape = [opts.batch, model.config.num_classes];
    let weights = Tensor::<f64>::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));

    let objective = |params: &ParamStore<f64>, image: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::inference();
        let s = Session::new(&tape, &model.layout, params, true);
        let logits = model.forward_classify(&s, tape.constant(image.clone()))?;
        Ok(logits.value().data().iter().zip(weights.data()).map(|(a, w)| a * w).sum())
    };

    let tape = Tape::new();
    let s = Session::new(&tape, &model.layout, &params, true);
    let x = tape.leaf(image.clone());
    let logits = model.forward_classify(&s, x)?;
    tape.backward(logits.weighted_sum(&weights)?)?;

    let scale_for = |name: &str| if opts.sabotage.as_deref() == Some(name) { 1.01 } else { 1.0 };
    let mut groups = Vec::new();
    let mut check = |name: &str, analytic: &Tensor<f64>, f: &mut dyn FnMut(usize, f64) -> Result<f64>| -> Result<()> {
        let k = opts.samples_per_group.min(analytic.len());
        let mut worst = 0.0f64;
        for _ in 0..k {
            let i = rng.gen_range(0..analytic.len());
            let numeric = (f(i, opts.eps)? - f(i, -opts.eps)?) / (2.0 * opts.eps);
            let err = rel_error(analytic.data()[i] * scale_for(name), numeric);
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
        groups.push(GroupError { name: name.to_string(), checked: k, max_rel_error: worst });
        Ok(())
    };

    let mut probe = params.clone();
    for (id, spec) in model.layout.specs().iter().enumerate() {
        if spec.kind != ParamKind::Trainable {
            continue;
        }
        let analytic = s.param(id).grad();
        check(&spec.name, &analytic, &mut |i, delta| {
            let orig = probe.by_index(id).data()[i];
            probe.by_index_mut(id).data_mut()[i] = orig + delta;
            let v = objective(&probe, &image);
            probe.by_index_mut(id).data_mut()[i] = orig;
            v
        })?;
    }
    let mut img = image.clone();
    check(INPUT_GROUP, &x.grad(), &mut |i, delta| {
        let orig = img.data()[i];
        img.data_mut()[i] = orig + delta;
        let v = objective(&params, &img);
        img.data_mut()[i] = orig;
        v
    })?;
    Ok(GradcheckReport { groups })
}
