//! Persistence: weight container, config files, PPM images and CSV reports.

pub mod csv;
mod config_file;
mod ppm;
mod weights;

pub use config_file::{emit_config, load_config, parse_config, save_config, ConfigFile};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, Normalize};
pub use weights::{decode, encode, load_weights, save_weights, MAGIC, VERSION};
