//! Inception Transformer (iFormer) backbone built on a small reverse-mode
//! autodiff engine, with cost accounting, Fourier diagnostics, persistence
//! and a synthetic training harness.

pub mod analysis;
pub mod backbone;
pub mod autodiff;
pub mod error;
pub mod io;
pub mod layers;
pub mod mixer;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
