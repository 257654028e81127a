//! Four-band sinusoidal grating classification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const IMAGE_SIZE: usize = 32;
pub const NUM_BANDS: usize = 4;
pub const NOISE_STD: f64 = 0.1;
pub const NYQUIST: f64 = 0.5;

/// Width of one frequency band, cycles per pixel.
pub const BAND_WIDTH: f64 = NYQUIST / NUM_BANDS as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct FreqBandDataset {
    /// `[n, 32, 32, 3]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Radial frequency of each grating, cycles per pixel.
    pub frequencies: Vec<f64>,
    pub seed: u64,
}

impl FreqBandDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images at `indices` as a `[k, 32, 32, 3]` batch.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per = IMAGE_SIZE * IMAGE_SIZE * 3;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.images.data()[i * per..(i + 1) * per].iter().map(|&v| T::of(v as f64)));
        }
        let images = Tensor::new(&[indices.len(), IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// One grating of band `label`, drawn from its own stream.
pub fn grating(label: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, f64) {
    let lo = label as f64 * BAND_WIDTH;
    // uniform on (lo, lo + width]
    let freq = lo + BAND_WIDTH * (1.0 - rng.gen::<f64>());
    let theta = rng.gen_range(0.0..PI);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (fx, fy) = (freq * theta.cos(), freq * theta.sin());
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut pixels = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let v = (2.0 * PI * (fx * x as f64 + fy * y as f64) + phase).sin();
            let v = v + noise.sample(rng);
            pixels.extend([v as f32; 3]);
        }
    }
    (pixels, freq)
}

/// `n` labelled gratings, balanced to within one per class.
pub fn gen_dataset(n: usize, seed: u64) -> Result<FreqBandDataset> {
    if n < 8 {
        return Err(Error::Usage(format!("dataset needs at least 8 examples, got {n}")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % NUM_BANDS).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut data = Vec::with_capacity(n * IMAGE_SIZE * IMAGE_SIZE * 3);
    let mut frequencies = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let (pixels, freq) = grating(label, &mut rng);
        data.extend(pixels);
        frequencies.push(freq);
    }
    let images = Tensor::new(&[n, IMAGE_SIZE, IMAGE_SIZE, 3], data)?;
    Ok(FreqBandDataset { images, labels, frequencies, seed })
}

pub const TRAIN_SIZE: usize = 8000;
pub const TEST_SIZE: usize = 400;

/// Disjoint train and held-out sets derived from one seed.
pub fn gen_split(seed: u64) -> Result<(FreqBandDataset, FreqBandDataset)> {
    let train = gen_dataset(TRAIN_SIZE, seed.wrapping_mul(2))?;
    let test = gen_dataset(TEST_SIZE, seed.wrapping_mul(2).wrapping_add(1))?;
    Ok((train, test))
}
