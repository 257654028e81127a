use crate::autodiff::Var;
use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` if the
/// kernel does not fit.
pub fn conv_out_size(size: usize, kernel: usize, spec: Conv2dSpec) -> Option<usize> {
    let padded = size + 2 * spec.padding;
    (padded >= kernel && spec.stride > 0).then(|| (padded - kernel) / spec.stride + 1)
}

/// Dense convolution (cross-correlation) with kernel `[k, k, C_in, C_out]`
/// and optional bias `[C_out]`.
pub fn conv2d<'t, T: Real>(
    x: Var<'t, T>,
    kernel: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    spec: Conv2dSpec,
) -> Result<Var<'t, T>> {
    let (xv, kv) = (x.value(), kernel.value());
    let (b, h, w, cin) = xv.dims4()?;
    let [k, k2, kcin, cout] = kv.shape()[..] else {
        return dim_err(format!("conv kernel must be [k,k,Cin,Cout], got {:?}", kv.shape()));
    };
    if k != k2 || kcin != cin {
        return dim_err(format!(
            "conv kernel {:?} does not match input {:?}",
            kv.shape(),
            xv.shape()
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return dim_err(format!("conv bias {:?} for {cout} outputs", bias.shape()));
        }
    }
    let (Some(ho), Some(wo)) = (conv_out_size(h, k, spec), conv_out_size(w, k, spec)) else {
        return dim_err(format!("kernel {k} does not fit input {h}x{w} with {spec:?}"));
    };
    let (stride, pad) = (spec.stride as isize, spec.padding as isize);
    // (input offset, kernel offset) pairs contributing to each output pixel
    let taps = move |oy: usize, ox: usize| {
        (0..k).flat_map(move |ky| {
            (0..k).filter_map(move |kx| {
                let iy = oy as isize * stride + ky as isize - pad;
                let ix = ox as isize * stride + kx as isize - pad;
                (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w)
                    .then(|| ((iy as usize * w + ix as usize) * cin, (ky * k + kx) * cin * cout))
            })
        })
    };

    let mut out = vec![T::zero(); b * ho * wo * cout];
    let (xd, kd) = (xv.data(), kv.data());
    for bi in 0..b {
        let x_img = &xd[bi * h * w * cin..(bi + 1) * h * w * cin];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((bi * ho + oy) * wo + ox) * cout;
                let orow = &mut out[o..o + cout];
                for (xo, ko) in taps(oy, ox) {
                    for ci in 0..cin {
                        let xval = x_img[xo + ci];
                        let krow = &kd[ko + ci * cout..ko + (ci + 1) * cout];
                        for (acc, &kw) in orow.iter_mut().zip(krow) {
                            *acc += xval * kw;
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        let bv = bias.value();
        for row in out.chunks_mut(cout) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
    }
    let value = Tensor::from_parts(vec![b, ho, wo, cout], out);
    let mut parents = vec![x, kernel];
    parents.extend(bias);
    Ok(x.tape().push(
        value,
        &parents,
        Box::new(move |g, parents, _| {
            let (xd, kd, gd) = (parents[0].data(), parents[1].data(), g.data());
            let mut dx = vec![T::zero(); xd.len()];
            let mut dk = vec![T::zero(); kd.len()];
            for bi in 0..b {
                let img = bi * h * w * cin;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let o = ((bi * ho + oy) * wo + ox) * cout;
                        let grow = &gd[o..o + cout];
                        for (xo, ko) in taps(oy, ox) {
                            for ci in 0..cin {
                                let krow = &kd[ko + ci * cout..ko + (ci + 1) * cout];
                                let mut acc = T::zero();
                                for (&gv, &kw) in grow.iter().zip(krow) {
                                    acc += gv * kw;
                                }
                                dx[img + xo + ci] += acc;
                                let xval = xd[img + xo + ci];
                                let dkrow = &mut dk[ko + ci * cout..ko + (ci + 1) * cout];
                                for (d, &gv) in dkrow.iter_mut().zip(grow) {
                                    *d += xval * gv;
                                }
                            }
                        }
                    }
                }
            }
            let mut grads = vec![
                Tensor::from_parts(parents[0].shape().to_vec(), dx),
                Tensor::from_parts(parents[1].shape().to_vec(), dk),
            ];
            if parents.len() == 3 {
                let mut db = vec![T::zero(); cout];
                for row in gd.chunks(cout) {
                    for (d, &gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                grads.push(Tensor::from_parts(vec![cout], db));
            }
            grads
        }),
    ))
}

/// Per-channel 3×3 correlation, stride 1, zero padding 1.
/// Kernel `[3, 3, C]`, bias `[C]`.
pub fn depthwise_conv3x3<'t, T: Real>(
    x: Var<'t, T>,
    kernel: Var<'t, T>,
    bias: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (xv, kv, bv) = (x.value(), kernel.value(), bias.value());
    let (b, h, w, c) = xv.dims4()?;
    if kv.shape() != [3, 3, c] || bv.shape() != [c] {
        return dim_err(format!(
            "depthwise kernel {:?} / bias {:?} for {c} channels",
            kv.shape(),
            bv.shape()
        ));
    }
    let taps = move |y: usize, xx: usize| {
        (0..3usize).flat_map(move |ky| {
            (0..3usize).filter_map(move |kx| {
                let iy = y as isize + ky as isize - 1;
                let ix = xx as isize + kx as isize - 1;
                (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w)
                    .then(|| ((iy as usize * w + ix as usize) * c, (ky * 3 + kx) * c))
            })
        })
    };
    let (xd, kd) = (xv.data(), kv.data());
    let mut out = Vec::with_capacity(xv.len());
    for bi in 0..b {
        let img = &xd[bi * h * w * c..(bi + 1) * h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let start = out.len();
                out.extend_from_slice(bv.data());
                let orow = &mut out[start..start + c];
                for (xo, ko) in taps(y, xx) {
                    for ((o, &xval), &kw) in orow.iter_mut().zip(&img[xo..xo + c]).zip(&kd[ko..ko + c]) {
                        *o += xval * kw;
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(vec![b, h, w, c], out);
    Ok(x.tape().push(
        value,
        &[x, kernel, bias],
        Box::new(move |g, parents, _| {
            let (xd, kd, gd) = (parents[0].data(), parents[1].data(), g.data());
            let mut dx = vec![T::zero(); xd.len()];
            let mut dk = vec![T::zero(); kd.len()];
            let mut db = vec![T::zero(); c];
            for bi in 0..b {
                let img = bi * h * w * c;
                for y in 0..h {
                    for xx in 0..w {
                        let o = img + (y * w + xx) * c;
                        let grow = &gd[o..o + c];
                        for (d, &gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                        for (xo, ko) in taps(y, xx) {
                            for ch in 0..c {
                                dx[img + xo + ch] += grow[ch] * kd[ko + ch];
                                dk[ko + ch] += grow[ch] * xd[img + xo + ch];
                            }
                        }
                    }
                }
            }
            vec![
                Tensor::from_parts(parents[0].shape().to_vec(), dx),
                Tensor::from_parts(parents[1].shape().to_vec(), dk),
                Tensor::from_parts(vec![c], db),
            ]
        }),
    ))
}
