//! Central finite differences: the independent oracle for every backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Real, Tensor};

use super::{Tape, Var};

/// Denominator floor of the relative error measure.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Default perturbation for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_eps = eps + eps;
    let grads = (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / two_eps
        })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), grads)
}

/// Relative error of one gradient element against its finite-difference value.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + REL_ERR_FLOOR)
}

/// `max_i |a_i − n_i| / (|n_i| + 1e-8)`.
pub fn max_rel_error<T: Real>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| rel_error(a.to_f64_lossless(), n.to_f64_lossless()))
        .fold(0.0, f64::max)
}

/// Checks the backward pass of `op` on 64-bit inputs.
///
/// The scalar objective is `Σ op(inputs) ⊙ R` with a fixed random `R`, so
/// every output element contributes with a distinct weight. Returns the
/// maximum relative error over all elements of all inputs.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, op: F) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let objective_weights = {
        let tape = Tape::<f64>::inference();
        let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = op(&vars).expect("op failed on check inputs");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(out.value().shape(), |_| rng.gen_range(-1.0..1.0))
    };
    let evaluate = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::<f64>::inference();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = op(&vars).expect("op failed on perturbed inputs");
        out.value().data().iter().zip(objective_weights.data()).map(|(a, w)| a * w).sum()
    };

    let tape = Tape::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = op(&vars).expect("op failed");
    let root = out.weighted_sum(&objective_weights).expect("objective shape");
    tape.backward(root).expect("backward");

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = var.grad();
        let mut xs = inputs.to_vec();
        let numeric = finite_diff_grad(
            |probe| {
                xs[i] = probe.clone();
                evaluate(&xs)
            },
            &inputs[i],
            DEFAULT_EPS,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    worst
}
