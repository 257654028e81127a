//! Cost accounting and Fourier diagnostics.

mod cost;
mod fourier;
mod spectrum;

pub use cost::{count_flops, count_params, CostReport, CostRow};
pub use fourier::{fft2d, ifft2d, signed_frequency, Spectrum};
pub use spectrum::{
    activation_spectrum, feature_spectrum, mean_amplitude, radial_profile, valid_selectors, Branch, Feed,
    Selector, SpectrumBin, SpectrumReport, DC_CONCENTRATION, DEFAULT_BINS, MAX_RADIAL_FREQUENCY,
};
