use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel normalization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalize {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalize {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

/// Splits the header into whitespace-separated fields, skipping `#` comments.
fn header_fields(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < count {
        match bytes.get(i) {
            None => return Err(Error::Format("PPM header ends early".into())),
            Some(b'#') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => i += 1,
            Some(_) => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((fields, i + 1))
}

pub fn decode_ppm<T: Real>(bytes: &[u8], norm: Normalize) -> Result<Tensor<T>> {
    if !bytes.starts_with(b"P6") {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format(format!("expected binary PPM (P6), got {magic:?}")));
    }
    let (fields, offset) = header_fields(bytes, 4)?;
    let num = |i: usize, what: &str| {
        fields[i].parse::<usize>().map_err(|_| Error::Format(format!("bad PPM {what} {:?}", fields[i])))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval must be 255, got {maxval}")));
    }
    let expected = w * h * 3;
    let raster = bytes.get(offset..).unwrap_or(&[]);
    if raster.len() != expected {
        return Err(Error::Corruption(format!("PPM {w}x{h} needs {expected} raster bytes, found {}", raster.len())));
    }
    let data = raster
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let c = i % 3;
            T::of((b as f64 / 255.0 - norm.mean[c]) / norm.std[c])
        })
        .collect();
    Tensor::new(&[1, h, w, 3], data).map_err(|e| Error::Format(format!("PPM: {e}")))
}

/// Binary PPM as a `[1, H, W, 3]` tensor.
pub fn load_ppm<T: Real>(path: impl AsRef<Path>, norm: Normalize) -> Result<Tensor<T>> {
    decode_ppm(&fs::read(path)?, norm)
}

/// Inverse of [`decode_ppm`] for 8-bit data; used to produce fixtures.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}
