//! TOML model configuration.
//!
//! Either `preset = "iformer-s"` (other top-level keys override the preset)
//! or an explicit `[[stages]]` list:
//!
//! ```toml
//! name = "custom"
//! head_dim = 8
//! num_classes = 4
//! input_size = 32
//! layerscale_init = 1e-6   # omit or 0 to disable
//! seed = 0
//!
//! [[stages]]
//! depth = 1
//! channels = 16
//! heads = 2
//! high_ratio_start = "1/2"
//! high_ratio_end = "1/2"
//! pool_stride = 2
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{HeadRatio, ModelConfig, StageConfig};
use crate::error::{Error, Result};
use crate::mixer::HighBranches;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageEntry {
    depth: usize,
    channels: usize,
    heads: usize,
    high_ratio_start: String,
    high_ratio_end: String,
    pool_stride: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    head_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layerscale_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stages: Option<Vec<StageEntry>>,
}

/// A model configuration plus the seed it was saved with.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub seed: Option<u64>,
}

fn ratio(value: &str, path: &str) -> Result<HeadRatio> {
    value.parse().map_err(|e| Error::Config(format!("{path}: {e}")))
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let doc: ConfigDoc = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let mut model = match (&doc.preset, &doc.stages) {
        (Some(_), Some(_)) => return Err(Error::Config("give either preset or [[stages]], not both".into())),
        (None, None) => return Err(Error::Config("config needs preset or [[stages]]".into())),
        (Some(p), None) => ModelConfig::preset(p)?,
        (None, Some(entries)) => {
            let missing = |k: &str| Error::Config(format!("explicit config needs {k}"));
            let stages = entries
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let path = format!("stages[{i}]");
                    Ok(StageConfig {
                        depth: s.depth,
                        channels: s.channels,
                        heads: s.heads,
                        high_ratio_start: ratio(&s.high_ratio_start, &format!("{path}.high_ratio_start"))?,
                        high_ratio_end: ratio(&s.high_ratio_end, &format!("{path}.high_ratio_end"))?,
                        pool_stride: s.pool_stride,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ModelConfig {
                name: "custom".into(),
                stages,
                head_dim: doc.head_dim.ok_or_else(|| missing("head_dim"))?,
                num_classes: doc.num_classes.ok_or_else(|| missing("num_classes"))?,
                input_size: doc.input_size.ok_or_else(|| missing("input_size"))?,
                layerscale_init: None,
                high_branches: HighBranches::Both,
            }
        }
    };
    if let Some(name) = doc.name {
        model.name = name;
    }
    if let Some(v) = doc.head_dim {
        model.head_dim = v;
    }
    if let Some(v) = doc.num_classes {
        model.num_classes = v;
    }
    if let Some(v) = doc.input_size {
        model.input_size = v;
    }
    if let Some(v) = doc.layerscale_init {
        model.layerscale_init = (v != 0.0).then_some(v);
    }
    model.validate()?;
    Ok(ConfigFile { model, seed: doc.seed })
}

/// Always the explicit form, so the file does not depend on preset tables.
pub fn emit_config(config: &ConfigFile) -> String {
    let m = &config.model;
    let doc = ConfigDoc {
        preset: None,
        name: Some(m.name.clone()),
        head_dim: Some(m.head_dim),
        num_classes: Some(m.num_classes),
        input_size: Some(m.input_size),
        layerscale_init: m.layerscale_init,
        seed: config.seed,
        stages: Some(
            m.stages
                .iter()
                .map(|s| StageEntry {
                    depth: s.depth,
                    channels: s.channels,
                    heads: s.heads,
                    high_ratio_start: s.high_ratio_start.to_string(),
                    high_ratio_end: s.high_ratio_end.to_string(),
                    pool_stride: s.pool_stride,
                })
                .collect(),
        ),
    };
    toml::to_string(&doc).expect("config serializes")
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(config: &ConfigFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, emit_config(config))?;
    Ok(())
}
