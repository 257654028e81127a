use crate::autodiff::Var;
use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub const LN_EPS: f64 = 1e-6;
pub const BN_EPS: f64 = 1e-5;

/// Normalizes every location over its channels, then applies `gamma`/`beta`.
pub fn layer_norm<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let c = xv.last_dim();
    if gv.shape() != [c] || bv.shape() != [c] {
        return dim_err(format!(
            "layer norm affine {:?}/{:?} for {c} channels",
            gv.shape(),
            bv.shape()
        ));
    }
    let rows = xv.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let eps = T::of(eps);
    let mut xhat = Vec::with_capacity(xv.len());
    let mut rstd = Vec::with_capacity(rows);
    for row in xv.data().chunks(c) {
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        xhat.extend(row.iter().map(|&v| (v - mean) * r));
    }
    let out: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &xh)| xh * gv.data()[i % c] + bv.data()[i % c])
        .collect();
    let value = Tensor::from_parts(xv.shape().to_vec(), out);
    Ok(x.tape().push(
        value,
        &[x, gamma, beta],
        Box::new(move |g, parents, _| {
            let gamma = parents[1].data();
            let mut dx = Vec::with_capacity(xhat.len());
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (r, (grow, xrow)) in g.data().chunks(c).zip(xhat.chunks(c)).enumerate() {
                let mut mean_d = T::zero();
                let mut mean_dx = T::zero();
                for i in 0..c {
                    let d = grow[i] * gamma[i];
                    mean_d += d;
                    mean_dx += d * xrow[i];
                    dgamma[i] += grow[i] * xrow[i];
                    dbeta[i] += grow[i];
                }
                mean_d *= inv_c;
                mean_dx *= inv_c;
                for i in 0..c {
                    let d = grow[i] * gamma[i];
                    dx.push(rstd[r] * (d - mean_d - xrow[i] * mean_dx));
                }
            }
            vec![
                Tensor::from_parts(parents[0].shape().to_vec(), dx),
                Tensor::from_parts(vec![c], dgamma),
                Tensor::from_parts(vec![c], dbeta),
            ]
        }),
    ))
}

/// Per-channel batch statistics observed in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, the quantity running estimates track.
    pub var: Tensor<T>,
}

/// Batch normalization over `(B, H, W)` per channel of a `[B, H, W, C]` map.
///
/// Training mode normalizes with the biased batch variance and returns the
/// batch statistics so the caller can update its running estimates. Eval
/// mode normalizes with `running_mean`/`running_var`.
pub fn batch_norm<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    training: bool,
) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
    let xv = x.value();
    let (_, _, _, c) = xv.dims4()?;
    for t in [&*gamma.value(), &*beta.value(), running_mean, running_var] {
        if t.shape() != [c] {
            return dim_err(format!("batch norm parameter {:?} for {c} channels", t.shape()));
        }
    }
    let n = xv.len() / c;
    let eps = T::of(BN_EPS);
    let (mean, var_biased) = if training {
        let mut mean = vec![T::zero(); c];
        for row in xv.data().chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_n = T::one() / T::of(n as f64);
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![T::zero(); c];
        for row in xv.data().chunks(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_n);
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };
    let rstd: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xhat: Vec<T> =
        xv.data().iter().enumerate().map(|(i, &v)| (v - mean[i % c]) * rstd[i % c]).collect();
    let (gv, bv) = (gamma.value(), beta.value());
    let out = xhat
        .iter()
        .enumerate()
        .map(|(i, &xh)| xh * gv.data()[i % c] + bv.data()[i % c])
        .collect();
    let value = Tensor::from_parts(xv.shape().to_vec(), out);

    let stats = training.then(|| {
        let correction = if n > 1 { T::of(n as f64 / (n as f64 - 1.0)) } else { T::one() };
        BatchStats {
            mean: Tensor::from_parts(vec![c], mean.clone()),
            var: Tensor::from_parts(vec![c], var_biased.iter().map(|&v| v * correction).collect()),
        }
    });

    let out = x.tape().push(
        value,
        &[x, gamma, beta],
        Box::new(move |g, parents, _| {
            let gamma = parents[1].data();
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (i, &gv) in gd.iter().enumerate() {
                dgamma[i % c] += gv * xhat[i];
                dbeta[i % c] += gv;
            }
            let dx: Vec<T> = if training {
                // dxhat = g·gamma; per channel sums of dxhat and dxhat·xhat are
                // dbeta·gamma and dgamma·gamma.
                let inv_n = T::one() / T::of(n as f64);
                gd.iter()
                    .enumerate()
                    .map(|(i, &gv)| {
                        let ch = i % c;
                        let dxhat = gv * gamma[ch];
                        rstd[ch]
                            * (dxhat
                                - dbeta[ch] * gamma[ch] * inv_n
                                - xhat[i] * dgamma[ch] * gamma[ch] * inv_n)
                    })
                    .collect()
            } else {
                gd.iter().enumerate().map(|(i, &gv)| gv * gamma[i % c] * rstd[i % c]).collect()
            };
            vec![
                Tensor::from_parts(parents[0].shape().to_vec(), dx),
                Tensor::from_parts(vec![c], dgamma),
                Tensor::from_parts(vec![c], dbeta),
            ]
        }),
    );
    Ok((out, stats))
}
