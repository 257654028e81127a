use crate::params::{ParamKind, ParamLayout, ParamStore};
use crate::tensor::{Real, Tensor};

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Weight decay applies to matrices and kernels, not to biases, norm
/// affines, LayerScale vectors or the positional embedding.
pub fn decays(name: &str, shape: &[usize]) -> bool {
    shape.len() >= 2 && !name.ends_with("pos_embed")
}

/// First and second moments for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub step: u64,
    pub first: Vec<Option<Tensor<T>>>,
    pub second: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Moments<T> {
    pub fn new(layout: &ParamLayout) -> Self {
        let zeros = || {
            layout
                .specs()
                .iter()
                .map(|s| (s.kind == ParamKind::Trainable).then(|| Tensor::zeros(&s.shape)))
                .collect::<Vec<_>>()
        };
        Self { step: 0, first: zeros(), second: zeros() }
    }
}

impl AdamW {
    /// One update of every trainable tensor; `grads` is indexed like the layout.
    pub fn update<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
        moments: &mut Moments<T>,
    ) {
        moments.step += 1;
        let t = moments.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(self.lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        for (id, spec) in layout.specs().iter().enumerate() {
            let (Some(g), Some(m), Some(v)) =
                (&grads[id], moments.first[id].as_mut(), moments.second[id].as_mut())
            else {
                continue;
            };
            let decay = if decays(&spec.name, &spec.shape) { T::of(1.0 - self.lr * self.weight_decay) } else { T::one() };
            let p = params.by_index_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let denom = (*v * inv_c2).sqrt() + eps;
                *p = *p * decay - step_size * *m / denom;
            }
        }
    }
}
