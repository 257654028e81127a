use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::backbone::IFormer;
use crate::error::{Error, Result};
use crate::layers::Session;
use crate::nn;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Real, Tensor};

use super::dataset::{FreqBandDataset, NUM_BANDS};
use super::optim::{AdamW, Moments};

pub const BATCH_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub optimizer: AdamW,
    pub moments: Moments<T>,
    pub rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: &IFormer, optimizer: AdamW, seed: u64) -> Self {
        Self { optimizer, moments: Moments::new(&model.layout), rng: ChaCha8Rng::seed_from_u64(seed), order: Vec::new(), cursor: 0 }
    }

    pub fn step(&self) -> u64 {
        self.moments.step
    }

    /// Next minibatch of indices, reshuffling each epoch.
    pub fn next_batch(&mut self, n: usize, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Cross-entropy of a batch in training mode, without updating anything.
pub fn batch_loss<T: Real>(model: &IFormer, params: &ParamStore<T>, images: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let tape = Tape::inference();
    let s = Session::new(&tape, &model.layout, params, true);
    let logits = model.forward_classify(&s, tape.constant(images.clone()))?;
    Ok(nn::cross_entropy(logits, labels)?.value().data()[0].to_f64_lossless())
}

/// Forward, backward and one optimizer update. Returns the loss before
/// the update.
pub fn train_step<T: Real>(
    model: &IFormer,
    params: &mut ParamStore<T>,
    state: &mut TrainState<T>,
    images: &Tensor<T>,
    labels: &[usize],
) -> Result<f64> {
    let tape = Tape::new();
    let (loss, grads, stats) = {
        let s = Session::new(&tape, &model.layout, params, true);
        let logits = model.forward_classify(&s, tape.constant(images.clone()))?;
        let loss = nn::cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor<T>>> = model
            .layout
            .specs()
            .iter()
            .enumerate()
            .map(|(id, spec)| (spec.kind == ParamKind::Trainable).then(|| s.param(id).grad()))
            .collect();
        (loss.value().data()[0].to_f64_lossless(), grads, s.take_stat_updates())
    };
    let grads_finite = grads.iter().flatten().all(|g| g.all_finite());
    if !loss.is_finite() || !grads_finite {
        let values = || grads.iter().flatten().flat_map(|g| g.data().iter().map(|v| v.to_f64_lossless()));
        let bad = values().filter(|v| !v.is_finite()).count();
        let max_grad = values().filter(|v| v.is_finite()).map(f64::abs).fold(0.0, f64::max);
        let first = model
            .layout
            .specs()
            .iter()
            .zip(&grads)
            .find(|(_, g)| g.as_ref().is_some_and(|g| !g.all_finite()))
            .map_or_else(|| "none".to_string(), |(spec, _)| spec.name.clone());
        return Err(Error::Numeric(format!(
            "non-finite training loss {loss} at step {}; {bad} non-finite gradient entries (first group: {first}); \
             max finite |grad| = {max_grad:e}",
            state.step()
        )));
    }
    state.optimizer.update(&model.layout, params, &grads, &mut state.moments);
    for (id, value) in stats {
        *params.by_index_mut(id) = value;
    }
    Ok(loss)
}

pub fn train<T: Real>(
    model: &IFormer,
    params: &mut ParamStore<T>,
    state: &mut TrainState<T>,
    data: &FreqBandDataset,
    steps: usize,
    batch: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let indices = state.next_batch(data.len(), batch);
        let (images, labels) = data.batch::<T>(&indices);
        losses.push(train_step(model, params, state, &images, &labels)?);
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub overall: f64,
    pub per_class: Vec<f64>,
}

impl Accuracy {
    /// Mean accuracy over `classes`.
    pub fn mean_over(&self, classes: &[usize]) -> f64 {
        classes.iter().map(|&c| self.per_class[c]).sum::<f64>() / classes.len() as f64
    }
}

pub fn predict<T: Real>(model: &IFormer, params: &ParamStore<T>, images: &Tensor<T>) -> Result<Vec<usize>> {
    let logits = model.classify(params, images)?;
    let k = logits.last_dim();
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Held-out accuracy in inference mode.
pub fn evaluate<T: Real>(model: &IFormer, params: &ParamStore<T>, data: &FreqBandDataset) -> Result<Accuracy> {
    let mut correct = [0usize; NUM_BANDS];
    let mut total = vec![0usize; NUM_BANDS];
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(100) {
        let (images, labels) = data.batch::<T>(chunk);
        for (p, l) in predict(model, params, &images)?.into_iter().zip(labels) {
            total[l] += 1;
            correct[l] += usize::from(p == l);
        }
    }
    let frac = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    Ok(Accuracy {
        overall: frac(correct.iter().sum(), total.iter().sum()),
        per_class: correct.iter().zip(&total).map(|(&c, &t)| frac(c, t)).collect(),
    })
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
