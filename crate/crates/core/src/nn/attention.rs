use crate::autodiff::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Real;

use super::activation::softmax_lastdim;

/// Per-location affine map: weight `[C_in, C_out]`, bias `[C_out]`.
#[derive(Clone, Copy)]
pub struct LinearParams<'t, T: Real> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

pub fn linear<'t, T: Real>(x: Var<'t, T>, p: &LinearParams<'t, T>) -> Result<Var<'t, T>> {
    let (cin, wshape) = (x.value().last_dim(), p.weight.shape());
    if wshape.len() != 2 || wshape[0] != cin {
        return dim_err(format!("linear weight {wshape:?} for {cin} input channels"));
    }
    x.matmul(p.weight)?.add(p.bias)
}

/// Multi-head self-attention parameters over `C` channels.
///
/// There is no key bias: it only shifts every logit of a query by the same
/// amount, which softmax ignores.
#[derive(Clone, Copy)]
pub struct MsaParams<'t, T: Real> {
    pub w_q: Var<'t, T>,
    pub b_q: Var<'t, T>,
    pub w_k: Var<'t, T>,
    pub w_v: Var<'t, T>,
    pub b_v: Var<'t, T>,
    pub w_o: Var<'t, T>,
    pub b_o: Var<'t, T>,
    pub heads: usize,
}

/// `softmax(QKᵀ/√d)V` per head over `[B, N, C]` tokens, heads concatenated and
/// projected by `w_o`.
pub fn msa<'t, T: Real>(x: Var<'t, T>, p: &MsaParams<'t, T>) -> Result<Var<'t, T>> {
    msa_with_weights(x, p).map(|(out, _)| out)
}

/// Like [`msa`], also returning the attention probabilities `[B, h, N, N]`.
pub fn msa_with_weights<'t, T: Real>(
    x: Var<'t, T>,
    p: &MsaParams<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = x.shape();
    let [b, n, c] = shape[..] else {
        return dim_err(format!("attention expects [B,N,C] tokens, got {shape:?}"));
    };
    let h = p.heads;
    if h == 0 || c % h != 0 {
        return Err(Error::Config(format!("{c} channels not divisible by {h} heads")));
    }
    let d = c / h;
    let split_heads = |t: Var<'t, T>| t.reshape(&[b, n, h, d])?.transpose(1, 2);

    let q = split_heads(linear(x, &LinearParams { weight: p.w_q, bias: p.b_q })?)?;
    let k = split_heads(x.matmul(p.w_k)?)?.transpose(2, 3)?;
    let v = split_heads(linear(x, &LinearParams { weight: p.w_v, bias: p.b_v })?)?;
    let logits = q.matmul(k)?.scale(T::one() / T::of(d as f64).sqrt());
    let attn = softmax_lastdim(logits);
    let mixed = attn.matmul(v)?.transpose(1, 2)?.reshape(&[b, n, c])?;
    let out = linear(mixed, &LinearParams { weight: p.w_o, bias: p.b_o })?;
    Ok((out, attn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_op;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn params(c: usize, seed: u64) -> Vec<Tensor<f64>> {
        vec![
            random(&[c, c], seed),
            random(&[c], seed + 1),
            random(&[c, c], seed + 2),
            random(&[c, c], seed + 3),
            random(&[c], seed + 4),
            random(&[c, c], seed + 5),
            random(&[c], seed + 6),
        ]
    }

    fn bind<'t>(v: &[Var<'t, f64>], heads: usize) -> MsaParams<'t, f64> {
        MsaParams { w_q: v[0], b_q: v[1], w_k: v[2], w_v: v[3], b_v: v[4], w_o: v[5], b_o: v[6], heads }
    }

    #[test]
    fn linear_examples() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::new(&[2], vec![1.0, 2.0]).unwrap().reshape(&[1, 2]).unwrap());
        let p = LinearParams { weight: tape.constant(Tensor::eye(2)), bias: tape.constant(Tensor::full(&[2], 5.0)) };
        assert_eq!(linear(x, &p).unwrap().value().data(), &[6.0, 7.0]);
        let bad = LinearParams { weight: tape.constant(Tensor::eye(3)), bias: tape.constant(Tensor::zeros(&[3])) };
        assert!(linear(x, &bad).is_err());
    }

    #[test]
    fn linear_matches_matmul_plus_bias() {
        let (x, w, b) = (random(&[2, 3, 4], 1), random(&[4, 5], 2), random(&[5], 3));
        let tape = Tape::<f64>::inference();
        let p = LinearParams { weight: tape.constant(w.clone()), bias: tape.constant(b.clone()) };
        let y = linear(tape.constant(x.clone()), &p).unwrap().value();
        for r in 0..6 {
            for o in 0..5 {
                let mut acc = b.data()[o];
                for i in 0..4 {
                    acc += x.data()[r * 4 + i] * w.at(&[i, o]);
                }
                assert!((y.data()[r * 5 + o] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let ps = params(4, 10);
        let x = random(&[1, 1, 4], 11);
        let tape = Tape::<f64>::inference();
        let vars: Vec<_> = ps.iter().map(|t| tape.constant(t.clone())).collect();
        let out = msa(tape.constant(x.clone()), &bind(&vars, 2)).unwrap().value();
        let xv = tape.constant(x);
        let v = linear(xv, &LinearParams { weight: vars[3], bias: vars[4] }).unwrap();
        let expected = linear(v, &LinearParams { weight: vars[5], bias: vars[6] }).unwrap().value();
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn two_tokens_one_head_matches_scalar_evaluation() {
        // c = 2, tokens x0, x1; weights hand-sized.
        let wq = [[0.5, -0.2], [0.1, 0.3]];
        let wk = [[0.4, 0.0], [-0.3, 0.2]];
        let wv = [[1.0, 0.5], [-0.5, 1.0]];
        let wo = [[0.2, 0.1], [0.0, -0.4]];
        let (bq, bv, bo) = ([0.1, -0.1], [0.05, 0.0], [0.0, 0.3]);
        let xs = [[1.0, 2.0], [-1.0, 0.5]];
        let lin = |w: &[[f64; 2]; 2], b: [f64; 2], x: [f64; 2]| {
            [x[0] * w[0][0] + x[1] * w[1][0] + b[0], x[0] * w[0][1] + x[1] * w[1][1] + b[1]]
        };
        let q: Vec<_> = xs.iter().map(|&x| lin(&wq, bq, x)).collect();
        let k: Vec<_> = xs.iter().map(|&x| lin(&wk, [0.0, 0.0], x)).collect();
        let v: Vec<_> = xs.iter().map(|&x| lin(&wv, bv, x)).collect();
        let mut expected = Vec::new();
        for qi in &q {
            let s: Vec<f64> = (0..2).map(|j| (qi[0] * k[j][0] + qi[1] * k[j][1]) / 2f64.sqrt()).collect();
            let z = s[0].exp() + s[1].exp();
            let a = [s[0].exp() / z, s[1].exp() / z];
            let mixed = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
            expected.extend(lin(&wo, bo, mixed));
        }

        let tape = Tape::<f64>::inference();
        let m = |w: [[f64; 2]; 2]| tape.constant(Tensor::new(&[2, 2], vec![w[0][0], w[0][1], w[1][0], w[1][1]]).unwrap());
        let vec2 = |b: [f64; 2]| tape.constant(Tensor::new(&[2], b.to_vec()).unwrap());
        let p = MsaParams { w_q: m(wq), b_q: vec2(bq), w_k: m(wk), w_v: m(wv), b_v: vec2(bv), w_o: m(wo), b_o: vec2(bo), heads: 1 };
        let x = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let out = msa(x, &p).unwrap().value();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let ps = params(6, 20);
        let tape = Tape::<f64>::inference();
        let vars: Vec<_> = ps.iter().map(|t| tape.constant(t.map(|v| 3.0 * v))).collect();
        let (_, attn) = msa_with_weights(tape.constant(random(&[2, 5, 6], 21)), &bind(&vars, 3)).unwrap();
        for row in attn.value().data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn heads_must_divide_channels() {
        let ps = params(6, 30);
        let tape = Tape::<f64>::inference();
        let vars: Vec<_> = ps.iter().map(|t| tape.constant(t.clone())).collect();
        let res = msa(tape.constant(random(&[1, 3, 6], 31)), &bind(&vars, 4));
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn msa_gradient_matches_finite_differences() {
        let mut inputs = vec![random(&[2, 3, 4], 40)];
        inputs.extend(params(4, 41));
        let err = check_op(&inputs, 1, |v| msa(v[0], &bind(&v[1..], 2)));
        assert!(err < 1e-5, "msa {err}");
    }
}
