use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// A 2-D complex spectrum in DFT order (zero frequency at index `[0, 0]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn amplitude(&self) -> Tensor<f64> {
        Tensor::new(&[self.height, self.width], self.data.iter().map(|z| z.norm()).collect())
            .expect("nonempty spectrum")
    }
}

fn transform(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for r in data.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Unnormalized forward DFT of an `[H, W]` map.
pub fn fft2d(map: &Tensor<f64>) -> Result<Spectrum> {
    let &[height, width] = map.shape() else {
        return dim_err(format!("fft2d expects an [H, W] map, got {:?}", map.shape()));
    };
    let mut data: Vec<Complex64> = map.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(height, width, &mut data, false);
    Ok(Spectrum { height, width, data })
}

/// Inverse of [`fft2d`], including the `1/(H·W)` factor.
pub fn ifft2d(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut data = spectrum.data.clone();
    transform(spectrum.height, spectrum.width, &mut data, true);
    let n = (spectrum.height * spectrum.width) as f64;
    data.iter_mut().for_each(|z| *z /= n);
    data
}

/// Signed frequency of DFT index `k` out of `n`, in cycles per sample.
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft(map: &Tensor<f64>) -> Vec<Complex64> {
        let (h, w) = (map.shape()[0], map.shape()[1]);
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        acc += map.data()[y * w + x] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn noise(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matches_naive_dft() {
        for (h, w) in [(8, 8), (5, 7), (1, 6)] {
            let x = noise(h, w, 3);
            let fast = fft2d(&x).unwrap();
            for (a, b) in fast.data.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn impulse_and_constant() {
        let mut impulse = Tensor::<f64>::zeros(&[4, 6]);
        impulse.data_mut()[0] = 1.0;
        assert!(fft2d(&impulse).unwrap().data.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));

        let c = fft2d(&Tensor::full(&[4, 6], 2.5)).unwrap();
        assert!((c.at(0, 0).re - 2.5 * 24.0).abs() < 1e-9);
        assert!(c.data[1..].iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn inverse_round_trip_and_parseval() {
        let x = noise(12, 10, 9);
        let f = fft2d(&x).unwrap();
        for (z, &v) in ifft2d(&f).iter().zip(x.data()) {
            assert!((z.re - v).abs() <= 1e-6 * v.abs().max(1e-3) && z.im.abs() < 1e-9);
        }
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = f.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / 120.0;
        assert!((energy - spectral).abs() / energy < 1e-6);
    }

    #[test]
    fn signed_frequencies() {
        assert_eq!(signed_frequency(0, 8), 0.0);
        assert_eq!(signed_frequency(4, 8), 0.5);
        assert_eq!(signed_frequency(5, 8), -0.375);
    }
}
