use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::autodiff::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Exact GELU `x·Φ(x)` with `Φ` evaluated through `erf`.
pub fn gelu<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    let value = x.value().map(|v| T::of(gelu_scalar(v.to_f64_lossless())));
    x.tape().push(
        value,
        &[x],
        Box::new(|g, parents, _| {
            let dx = g
                .data()
                .iter()
                .zip(parents[0].data())
                .map(|(&gv, &xv)| gv * T::of(gelu_grad_scalar(xv.to_f64_lossless())))
                .collect();
            vec![Tensor::from_parts(g.shape().to_vec(), dx)]
        }),
    )
}

/// Softmax over the trailing axis with max subtraction.
pub fn softmax_lastdim<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let n = xv.last_dim();
    let mut out = Vec::with_capacity(xv.len());
    for row in xv.data().chunks(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    let value = Tensor::from_parts(xv.shape().to_vec(), out);
    x.tape().push(
        value,
        &[x],
        Box::new(move |g, _, y| {
            let mut dx = Vec::with_capacity(y.len());
            for (grow, yrow) in g.data().chunks(n).zip(y.data().chunks(n)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                dx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - dot)));
            }
            vec![Tensor::from_parts(y.shape().to_vec(), dx)]
        }),
    )
}

/// Mean cross-entropy of `[B, K]` logits against class labels.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let [b, k] = lv.shape()[..] else {
        return dim_err(format!("cross entropy expects [B,K] logits, got {:?}", lv.shape()));
    };
    if labels.len() != b {
        return dim_err(format!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Usage(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Vec::with_capacity(b * k);
    let mut loss = T::zero();
    for (row, &label) in lv.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[label];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    let inv_b = T::one() / T::of(b as f64);
    let labels = labels.to_vec();
    Ok(logits.tape().push(
        Tensor::scalar(loss * inv_b),
        &[logits],
        Box::new(move |g, _, _| {
            let scale = g.data()[0] * inv_b;
            let mut d = probs.clone();
            for (i, &label) in labels.iter().enumerate() {
                d[i * k + label] -= T::one();
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Tensor::from_parts(vec![b, k], d)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_op, finite_diff_grad, max_rel_error};
    use crate::autodiff::Tape;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let x = Tensor::<f64>::from_fn(&[41], |i| -4.0 + 0.2 * i as f64 + 0.013);
        let tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone());
        tape.backward(gelu(xv).sum()).unwrap();
        let numeric = finite_diff_grad(|t| t.data().iter().map(|&v| gelu_scalar(v)).sum(), &x, 1e-5);
        let err = max_rel_error(&xv.grad(), &numeric);
        assert!(err < 1e-6, "gelu rel err {err}");
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::<f64>::inference();
        let u = softmax_lastdim(tape.constant(Tensor::full(&[2, 4], 0.3))).value();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let x = softmax_lastdim(tape.constant(Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap())).value();
        assert!((x.data()[0] - 0.25).abs() < 1e-15 && (x.data()[1] - 0.75).abs() < 1e-15);

        let row = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let shifted = row.map(|v| v + 16.0);
        let a = softmax_lastdim(tape.constant(row)).value();
        let b = softmax_lastdim(tape.constant(shifted)).value();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let tape = Tape::<f64>::inference();
        let l = cross_entropy(tape.constant(Tensor::zeros(&[3, 4])), &[0, 1, 3]).unwrap();
        assert!((l.value().data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(tape.constant(Tensor::zeros(&[1, 4])), &[4]).is_err());
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let x = Tensor::<f64>::from_fn(&[3, 5], |i| ((i * 7919) % 13) as f64 / 4.0 - 1.6);
        assert!(check_op(std::slice::from_ref(&x), 1, |v| Ok(gelu(v[0]))) < 1e-6);
        assert!(check_op(std::slice::from_ref(&x), 2, |v| Ok(softmax_lastdim(v[0]))) < 1e-5);
        assert!(check_op(&[x], 3, |v| cross_entropy(v[0], &[4, 0, 2])) < 1e-5);
    }
}
