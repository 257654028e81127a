use crate::autodiff::Var;
use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

/// 3×3 sliding max, stride 1, padding 1. Padded positions never win; on ties
/// the first maximal element in row-major window order takes the gradient.
pub fn max_pool3x3<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (b, h, w, c) = xv.dims4()?;
    let xd = xv.data();
    let mut out = Vec::with_capacity(xv.len());
    let mut argmax = Vec::with_capacity(xv.len());
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for iy in y.saturating_sub(1)..(y + 2).min(h) {
                        for ix in xx.saturating_sub(1)..(xx + 2).min(w) {
                            let at = ((bi * h + iy) * w + ix) * c + ch;
                            if xd[at] > best {
                                best = xd[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    let value = Tensor::from_parts(xv.shape().to_vec(), out);
    Ok(x.tape().push(
        value,
        &[x],
        Box::new(move |g, parents, _| {
            let mut dx = vec![T::zero(); parents[0].len()];
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                dx[src] += gv;
            }
            vec![Tensor::from_parts(parents[0].shape().to_vec(), dx)]
        }),
    ))
}

/// Non-overlapping 2×2 mean; `H` and `W` must be even.
pub fn avg_pool2x2_s2<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (b, h, w, c) = xv.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("2x2 average pooling needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let xd = xv.data();
    let mut out = vec![T::zero(); b * ho * wo * c];
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let src = ((bi * h + y) * w + xx) * c;
                let dst = ((bi * ho + y / 2) * wo + xx / 2) * c;
                for ch in 0..c {
                    out[dst + ch] += xd[src + ch];
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= quarter);
    let value = Tensor::from_parts(vec![b, ho, wo, c], out);
    Ok(x.tape().push(
        value,
        &[x],
        Box::new(move |g, _, _| {
            let gd = g.data();
            let mut dx = Vec::with_capacity(b * h * w * c);
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        let src = ((bi * ho + y / 2) * wo + xx / 2) * c;
                        dx.extend(gd[src..src + c].iter().map(|&v| v * quarter));
                    }
                }
            }
            vec![Tensor::from_parts(vec![b, h, w, c], dx)]
        }),
    ))
}

/// Replicates every pixel into a 2×2 block.
pub fn upsample_nearest2x<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (b, h, w, c) = xv.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let xd = xv.data();
    let mut out = Vec::with_capacity(4 * xv.len());
    for bi in 0..b {
        for y in 0..ho {
            for xx in 0..wo {
                let src = ((bi * h + y / 2) * w + xx / 2) * c;
                out.extend_from_slice(&xd[src..src + c]);
            }
        }
    }
    let value = Tensor::from_parts(vec![b, ho, wo, c], out);
    Ok(x.tape().push(
        value,
        &[x],
        Box::new(move |g, _, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); b * h * w * c];
            for bi in 0..b {
                for y in 0..ho {
                    for xx in 0..wo {
                        let src = ((bi * ho + y) * wo + xx) * c;
                        let dst = ((bi * h + y / 2) * w + xx / 2) * c;
                        for ch in 0..c {
                            dx[dst + ch] += gd[src + ch];
                        }
                    }
                }
            }
            vec![Tensor::from_parts(vec![b, h, w, c], dx)]
        }),
    ))
}
