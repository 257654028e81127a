//! Differentiable tensor primitives: products, elementwise arithmetic,
//! reshapes and channel slicing.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

use super::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Row-major strides of `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn swap_axes<T: Real>(x: &Tensor<T>, a: usize, b: usize) -> Tensor<T> {
    let mut shape = x.shape().to_vec();
    shape.swap(a, b);
    let in_strides = strides(x.shape());
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(a, b);
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; shape.len()];
    let src = x.data();
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(shape, out)
}

/// Plain batched product used by both the forward and backward passes.
/// `a: [batch, m, k]`, `b: [batch or 1, k, p]`.
fn matmul_raw<T: Real>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    b_shared: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * p];
    for bi in 0..batch {
        let a_off = bi * m * k;
        let b_off = if b_shared { 0 } else { bi * k * p };
        for i in 0..m {
            let row = &mut out[(bi * m + i) * p..(bi * m + i + 1) * p];
            for kk in 0..k {
                let av = a[a_off + i * k + kk];
                if av == T::zero() {
                    continue;
                }
                let brow = &b[b_off + kk * p..b_off + (kk + 1) * p];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

// fallible, so the operator traits do not fit
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    /// `[..., M, K] × [..., K, P] → [..., M, P]`.
    ///
    /// `b` may also be a plain `[K, P]` matrix shared by every leading index
    /// of `a`, which is how per-location linear layers are expressed.
    pub fn matmul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (av, bv) = (self.value(), b.value());
        let (ash, bsh) = (av.shape(), bv.shape());
        let mismatch = || {
            Error::Dimension(format!("matmul shapes {ash:?} and {bsh:?} are incompatible"))
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, p) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let b_shared = bsh.len() == 2;
        if !b_shared && ash[..ash.len() - 2] != bsh[..bsh.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let out = matmul_raw(av.data(), bv.data(), batch, m, k, p, b_shared);
        let mut shape = ash.to_vec();
        *shape.last_mut().unwrap() = p;
        let value = Tensor::from_parts(shape, out);
        Ok(self.tape.push(
            value,
            &[self, b],
            Box::new(move |g, parents, _| {
                let (a, bm) = (&parents[0], &parents[1]);
                let (a, bm, g) = (a.data(), bm.data(), g.data());
                let mut da = vec![T::zero(); a.len()];
                let mut db = vec![T::zero(); bm.len()];
                for bi in 0..batch {
                    let b_off = if b_shared { 0 } else { bi * k * p };
                    for i in 0..m {
                        let grow = &g[(bi * m + i) * p..(bi * m + i + 1) * p];
                        for kk in 0..k {
                            let brow = &bm[b_off + kk * p..b_off + (kk + 1) * p];
                            let mut acc = T::zero();
                            for (&gv, &bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            da[(bi * m + i) * k + kk] = acc;
                            let av = a[(bi * m + i) * k + kk];
                            let dbrow = &mut db[b_off + kk * p..b_off + (kk + 1) * p];
                            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_parts(parents[0].shape().to_vec(), da),
                    Tensor::from_parts(parents[1].shape().to_vec(), db),
                ]
            }),
        ))
    }

    /// Elementwise `a op b`. `b` may match `a` exactly or match a trailing
    /// suffix of `a`'s shape (bias-style broadcast).
    pub fn binary(self, op: BinaryOp, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (av, bv) = (self.value(), b.value());
        let (ash, bsh) = (av.shape(), bv.shape());
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh {
            return dim_err(format!("cannot broadcast {bsh:?} onto {ash:?}"));
        }
        let period = bv.len();
        let (ad, bd) = (av.data(), bv.data());
        let out: Vec<T> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i % period];
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::from_parts(ash.to_vec(), out);
        Ok(self.tape.push(
            value,
            &[self, b],
            Box::new(move |g, parents, _| {
                let (a, bt) = (parents[0].data(), parents[1].data());
                let gd = g.data();
                let mut da = vec![T::zero(); a.len()];
                let mut db = vec![T::zero(); bt.len()];
                for (i, &gv) in gd.iter().enumerate() {
                    let j = i % period;
                    match op {
                        BinaryOp::Add => {
                            da[i] = gv;
                            db[j] += gv;
                        }
                        BinaryOp::Sub => {
                            da[i] = gv;
                            db[j] -= gv;
                        }
                        BinaryOp::Mul => {
                            da[i] = gv * bt[j];
                            db[j] += gv * a[i];
                        }
                    }
                }
                vec![
                    Tensor::from_parts(parents[0].shape().to_vec(), da),
                    Tensor::from_parts(parents[1].shape().to_vec(), db),
                ]
            }),
        ))
    }

    pub fn add(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Add, b)
    }

    pub fn sub(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Sub, b)
    }

    pub fn mul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Mul, b)
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let value = self.value().map(|v| v * factor);
        self.tape.push(
            value,
            &[self],
            Box::new(move |g, _, _| vec![g.map(|v| v * factor)]),
        )
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(self) -> Var<'t, T> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.push(
            value,
            &[self],
            Box::new(|g, parents, _| vec![Tensor::full(parents[0].shape(), g.data()[0])]),
        )
    }

    /// `Σ self ⊙ weights` for a constant weight tensor of the same shape.
    pub fn weighted_sum(self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        let v = self.value();
        if v.shape() != weights.shape() {
            return dim_err(format!(
                "weighted_sum shapes {:?} vs {:?}",
                v.shape(),
                weights.shape()
            ));
        }
        let total: T = v.data().iter().zip(weights.data()).map(|(&a, &w)| a * w).sum();
        let w = weights.clone();
        Ok(self.tape.push(
            Tensor::scalar(total),
            &[self],
            Box::new(move |g, _, _| vec![w.map(|x| x * g.data()[0])]),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.push(
            value,
            &[self],
            Box::new(|g, parents, _| {
                vec![Tensor::from_parts(parents[0].shape().to_vec(), g.data().to_vec())]
            }),
        ))
    }

    /// Swaps two axes, materializing the result.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if a >= v.rank() || b >= v.rank() {
            return dim_err(format!("transpose axes ({a},{b}) for shape {:?}", v.shape()));
        }
        let value = swap_axes(&v, a, b);
        Ok(self.tape.push(value, &[self], Box::new(move |g, _, _| vec![swap_axes(g, a, b)])))
    }

    /// Mean over axis 1 of a `[B, N, C]` tensor, giving `[B, C]`.
    pub fn mean_tokens(self) -> Result<Var<'t, T>> {
        let v = self.value();
        let [b, n, c] = v.shape()[..] else {
            return dim_err(format!("mean_tokens expects [B,N,C], got {:?}", v.shape()));
        };
        let inv = T::one() / T::of(n as f64);
        let mut out = vec![T::zero(); b * c];
        for bi in 0..b {
            for t in 0..n {
                let row = &v.data()[(bi * n + t) * c..(bi * n + t + 1) * c];
                for (o, &x) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.tape.push(
            Tensor::from_parts(vec![b, c], out),
            &[self],
            Box::new(move |g, _, _| {
                let mut dx = Vec::with_capacity(b * n * c);
                for bi in 0..b {
                    let grow = &g.data()[bi * c..(bi + 1) * c];
                    for _ in 0..n {
                        dx.extend(grow.iter().map(|&v| v * inv));
                    }
                }
                vec![Tensor::from_parts(vec![b, n, c], dx)]
            }),
        ))
    }

    /// Contiguous slices of the trailing (channel) axis.
    pub fn split_channels(self, sizes: &[usize]) -> Result<Vec<Var<'t, T>>> {
        let v = self.value();
        let c = v.last_dim();
        let total: usize = sizes.iter().sum();
        if total != c || sizes.contains(&0) {
            return Err(Error::Partition(format!(
                "split sizes {sizes:?} do not partition {c} channels"
            )));
        }
        let rows = v.len() / c;
        let lead = v.shape()[..v.rank() - 1].to_vec();
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &size in sizes {
            let mut data = Vec::with_capacity(rows * size);
            for r in 0..rows {
                data.extend_from_slice(&v.data()[r * c + start..r * c + start + size]);
            }
            let mut shape = lead.clone();
            shape.push(size);
            let offset = start;
            parts.push(self.tape.push(
                Tensor::from_parts(shape, data),
                &[self],
                Box::new(move |g, parents, _| {
                    let mut dx = vec![T::zero(); parents[0].len()];
                    for r in 0..rows {
                        dx[r * c + offset..r * c + offset + size]
                            .copy_from_slice(&g.data()[r * size..(r + 1) * size]);
                    }
                    vec![Tensor::from_parts(parents[0].shape().to_vec(), dx)]
                }),
            ));
            start += size;
        }
        Ok(parts)
    }
}

impl<T: Real> Tape<T> {
    /// Stacks parts along the trailing (channel) axis in the given order.
    pub fn concat_channels<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let Some(first) = parts.first() else {
            return Err(Error::Dimension("concat of an empty list".into()));
        };
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let lead = values[0].shape()[..values[0].rank() - 1].to_vec();
        for v in &values {
            if v.shape()[..v.rank() - 1] != lead[..] {
                return dim_err(format!(
                    "concat leading dims differ: {:?} vs {:?}",
                    first.shape(),
                    v.shape()
                ));
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
        let c: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * c);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(c);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            parts,
            Box::new(move |g, parents, _| {
                let mut grads: Vec<Vec<T>> =
                    widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * c;
                    for (gr, &w) in grads.iter_mut().zip(&widths) {
                        gr.extend_from_slice(&g.data()[off..off + w]);
                        off += w;
                    }
                }
                grads
                    .into_iter()
                    .zip(parents)
                    .map(|(d, p)| Tensor::from_parts(p.shape().to_vec(), d))
                    .collect()
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_op, max_rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                for kk in 0..k {
                    out[i * p + j] += a.at(&[i, kk]) * b.at(&[kk, j]);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_dot() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = tape.constant(Tensor::eye(2));
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let col = tape.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
        assert_eq!(row.matmul(col).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let (a, b) = (random(&[3, 4], 1), random(&[4, 2], 2));
        let tape = Tape::<f64>::new();
        let out = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap();
        for (x, y) in out.value().data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("incompatible"), "{err}");
    }

    #[test]
    fn elementwise_identities() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random(&[2, 3], 3));
        let add0 = x.add(tape.constant(Tensor::zeros(&[2, 3]))).unwrap();
        let mul1 = x.mul(tape.constant(Tensor::ones(&[2, 3]))).unwrap();
        assert_eq!(*add0.value(), *x.value());
        assert_eq!(*mul1.value(), *x.value());
        let a = tape.constant(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
        let bad = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(x.add(bad).is_err());
    }

    #[test]
    fn concat_split_identities() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random(&[1, 2, 2, 3], 4));
        assert_eq!(*tape.concat_channels(&[x]).unwrap().value(), *x.value());
        let parts: Vec<_> =
            [4, 2, 2].iter().enumerate().map(|(i, &c)| tape.constant(random(&[2, 3, 3, c], i as u64))).collect();
        let cat = tape.concat_channels(&parts).unwrap();
        assert_eq!(cat.shape(), vec![2, 3, 3, 8]);
        let back = cat.split_channels(&[4, 2, 2]).unwrap();
        for (p, q) in parts.iter().zip(&back) {
            assert_eq!(*p.value(), *q.value());
        }
        let s = x.split_channels(&[3]).unwrap();
        assert_eq!(*s[0].value(), *x.value());
        let six = tape.constant(Tensor::from_fn(&[1, 1, 1, 6], |i| i as f64));
        let halves = six.split_channels(&[4, 2]).unwrap();
        assert_eq!(halves[0].value().data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(halves[1].value().data(), &[4.0, 5.0]);
        assert!(matches!(six.split_channels(&[4, 1]), Err(Error::Partition(_))));
        let other = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(tape.concat_channels(&[six, other]).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let a = random(&[2, 3, 4], 10);
        let b = random(&[2, 4, 2], 11);
        let w = random(&[4, 2], 12);
        let bias = random(&[4], 13);
        let same = random(&[2, 3, 4], 14);
        let tol = 1e-5;

        let err = check_op(&[a.clone(), b.clone()], 21, |v| v[0].matmul(v[1]));
        assert!(err < tol, "batched matmul {err}");
        let err = check_op(&[a.clone(), w], 22, |v| v[0].matmul(v[1]));
        assert!(err < tol, "shared matmul {err}");
        for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul] {
            let err = check_op(&[a.clone(), bias.clone()], 23, |v| v[0].binary(op, v[1]));
            assert!(err < tol, "{op:?} broadcast {err}");
            let err = check_op(&[a.clone(), same.clone()], 24, |v| v[0].binary(op, v[1]));
            assert!(err < tol, "{op:?} {err}");
        }
        let err = check_op(std::slice::from_ref(&a), 25, |v| Ok(v[0].scale(-1.5)));
        assert!(err < tol);
        let err = check_op(std::slice::from_ref(&a), 26, |v| v[0].transpose(0, 2));
        assert!(err < tol);
        let err = check_op(std::slice::from_ref(&a), 27, |v| v[0].mean_tokens());
        assert!(err < tol);
        let err = check_op(std::slice::from_ref(&a), 28, |v| v[0].reshape(&[6, 4]));
        assert!(err < tol);
        let err = check_op(&[random(&[1, 2, 2, 5], 15)], 29, |v| {
            let parts = v[0].split_channels(&[2, 3])?;
            let t = v[0].tape();
            t.concat_channels(&[parts[1], parts[0].scale(2.0)])
        });
        assert!(err < tol);
        assert!(max_rel_error(&Tensor::scalar(1.0), &Tensor::scalar(1.0)) == 0.0);
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        let x0 = random(&[3, 4], 30);
        let w = random(&[4, 2], 31);
        let grad_of = |cf: f64, cg: f64| {
            let tape = Tape::<f64>::new();
            let x = tape.leaf(x0.clone());
            let wv = tape.constant(w.clone());
            let f = x.matmul(wv).unwrap().sum();
            let g = x.mul(x).unwrap().sum();
            let root = f.scale(cf).add(g.scale(cg)).unwrap();
            tape.backward(root).unwrap();
            x.grad()
        };
        let (gf, gg, combo) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(2.0, -3.0));
        for i in 0..combo.len() {
            let expected = 2.0 * gf.data()[i] - 3.0 * gg.data()[i];
            assert!((combo.data()[i] - expected).abs() < 1e-12);
        }
    }
}
