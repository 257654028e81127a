//! Brute-force scalar references shared by the integration tests.
#![allow(dead_code)]

use iformer::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d < tol, "max |Δ| = {d:e} ≥ {tol:e}");
}

fn idx(shape: &[usize], i: &[usize]) -> usize {
    i.iter().zip(shape).fold(0, |acc, (&v, &d)| acc * d + v)
}

/// `x[..., C_in] · w[C_in, C_out] + b`.
pub fn linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / cin;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        for o in 0..cout {
            let mut acc = b.data()[o];
            for i in 0..cin {
                acc += x.data()[r * cin + i] * w.data()[i * cout + o];
            }
            out[r * cout + o] = acc;
        }
    }
    Tensor::new(&shape, out).unwrap()
}

fn get4(x: &Tensor<f64>, b: usize, y: isize, xx: isize, c: usize) -> Option<f64> {
    let s = x.shape();
    if y < 0 || xx < 0 || y as usize >= s[1] || xx as usize >= s[2] {
        return None;
    }
    Some(x.data()[idx(s, &[b, y as usize, xx as usize, c])])
}

/// 3×3 stride-1 max pool, windows clipped at the border.
pub fn max_pool3x3(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let mut out = x.clone();
    for b in 0..s[0] {
        for y in 0..s[1] {
            for xx in 0..s[2] {
                for c in 0..s[3] {
                    let mut m = f64::NEG_INFINITY;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if let Some(v) = get4(x, b, y as isize + dy, xx as isize + dx, c) {
                                m = m.max(v);
                            }
                        }
                    }
                    out.data_mut()[idx(&s, &[b, y, xx, c])] = m;
                }
            }
        }
    }
    out
}

/// Depthwise 3×3, zero padding, kernel `[3, 3, C]`.
pub fn dwconv3x3(x: &Tensor<f64>, k: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let mut out = x.clone();
    for b in 0..s[0] {
        for y in 0..s[1] {
            for xx in 0..s[2] {
                for c in 0..s[3] {
                    let mut acc = bias.data()[c];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let v = get4(x, b, y as isize + ky as isize - 1, xx as isize + kx as isize - 1, c);
                            acc += v.unwrap_or(0.0) * k.data()[(ky * 3 + kx) * s[3] + c];
                        }
                    }
                    out.data_mut()[idx(&s, &[b, y, xx, c])] = acc;
                }
            }
        }
    }
    out
}

/// Dense conv, kernel `[k, k, C_in, C_out]`.
pub fn conv2d(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let (ks, cin, cout) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (s[1] + 2 * pad - ks) / stride + 1;
    let wo = (s[2] + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; s[0] * ho * wo * cout];
    for b in 0..s[0] {
        for y in 0..ho {
            for xx in 0..wo {
                for o in 0..cout {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[o]);
                    for ky in 0..ks {
                        for kx in 0..ks {
                            for i in 0..cin {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if let Some(v) = get4(x, b, iy, ix, i) {
                                    acc += v * k.data()[((ky * ks + kx) * cin + i) * cout + o];
                                }
                            }
                        }
                    }
                    out[((b * ho + y) * wo + xx) * cout + o] = acc;
                }
            }
        }
    }
    Tensor::new(&[s[0], ho, wo, cout], out).unwrap()
}

pub fn avg_pool2x2(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[1] / 2, s[2] / 2);
    let mut out = vec![0.0; s[0] * h * w * s[3]];
    for b in 0..s[0] {
        for y in 0..h {
            for xx in 0..w {
                for c in 0..s[3] {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x.data()[idx(s, &[b, 2 * y + dy, 2 * xx + dx, c])];
                        }
                    }
                    out[((b * h + y) * w + xx) * s[3] + c] = acc / 4.0;
                }
            }
        }
    }
    Tensor::new(&[s[0], h, w, s[3]], out).unwrap()
}

pub fn upsample2x(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[1] * 2, s[2] * 2);
    let mut out = vec![0.0; s[0] * h * w * s[3]];
    for b in 0..s[0] {
        for y in 0..h {
            for xx in 0..w {
                for c in 0..s[3] {
                    out[((b * h + y) * w + xx) * s[3] + c] = x.data()[idx(s, &[b, y / 2, xx / 2, c])];
                }
            }
        }
    }
    Tensor::new(&[s[0], h, w, s[3]], out).unwrap()
}

pub struct Msa {
    pub w_q: Tensor<f64>,
    pub b_q: Tensor<f64>,
    pub w_k: Tensor<f64>,
    pub w_v: Tensor<f64>,
    pub b_v: Tensor<f64>,
    pub w_o: Tensor<f64>,
    pub b_o: Tensor<f64>,
    pub heads: usize,
}

/// Multi-head attention on `[B, N, C]` by explicit loops; returns the
/// output and the attention probabilities `[B, heads, N, N]`.
pub fn msa(x: &Tensor<f64>, p: &Msa) -> (Tensor<f64>, Vec<f64>) {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = c / p.heads;
    let zero = Tensor::zeros(&[c]);
    let q = linear(x, &p.w_q, &p.b_q);
    let k = linear(x, &p.w_k, &zero);
    let v = linear(x, &p.w_v, &p.b_v);
    let mut merged = vec![0.0; b * n * c];
    let mut probs = vec![0.0; b * p.heads * n * n];
    for bi in 0..b {
        for h in 0..p.heads {
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..d).map(|e| q.data()[(bi * n + i) * c + h * d + e] * k.data()[(bi * n + j) * c + h * d + e]).sum::<f64>()
                            / (d as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for j in 0..n {
                    let a = (logits[j] - m).exp() / z;
                    probs[((bi * p.heads + h) * n + i) * n + j] = a;
                    for e in 0..d {
                        merged[(bi * n + i) * c + h * d + e] += a * v.data()[(bi * n + j) * c + h * d + e];
                    }
                }
            }
        }
    }
    let merged = Tensor::new(&[b, n, c], merged).unwrap();
    (linear(&merged, &p.w_o, &p.b_o), probs)
}

/// Channel slice `[from, to)` of a channel-last tensor.
pub fn channels(x: &Tensor<f64>, from: usize, to: usize) -> Tensor<f64> {
    let c = x.last_dim();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = to - from;
    let data = x.data().chunks_exact(c).flat_map(|row| row[from..to].to_vec()).collect();
    Tensor::new(&shape, data).unwrap()
}

pub fn concat(parts: &[Tensor<f64>]) -> Tensor<f64> {
    let rows = parts[0].len() / parts[0].last_dim();
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let c = p.last_dim();
            data.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
    }
    let mut shape = parts[0].shape().to_vec();
    *shape.last_mut().unwrap() = total;
    Tensor::new(&shape, data).unwrap()
}

pub fn layer_norm(x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let c = x.last_dim();
    let data = x
        .data()
        .chunks_exact(c)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter().enumerate().map(move |(i, v)| (v - mean) * inv * g.data()[i] + b.data()[i]).collect::<Vec<_>>()
        })
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

pub fn gelu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}
