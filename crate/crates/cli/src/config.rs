//! The experiment configuration: a TOML file merged with dotted-path
//! overrides, then deserialized with defaults for everything left unset.
//!
//! The master `seed` cascades into every stage (training, string, probes)
//! unless the file or an override pins that stage's own seed explicitly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use efcn_core::data::SyntheticConfig;
use efcn_core::interp::StringConfig;
use efcn_core::probes::{PowerIterConfig, ProbeConfig};
use efcn_core::train::{RelaxConfig, TrainConfig};

use crate::errors::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
    Cifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding CIFAR binary batches; `$EFCN_DATA_DIR` when unset.
    pub dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels per convolutional block.
    pub channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { channels: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Source-model run (snapshots on by default).
    pub cnn: TrainConfig,
    /// Settings shared by every dense run: relaxed eFCNs and the fresh FCN.
    pub relax: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = RelaxConfig::default();
        TrainSection {
            cnn: d.cnn,
            relax: d.relax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub probe_set_size: usize,
    pub probe_seed: u64,
    pub power: PowerIterConfig,
    /// Whether `protocol` runs the (expensive) power iteration per probe.
    /// The `probe` subcommand ignores this and follows `--what`.
    pub with_hessian: bool,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = ProbeConfig::default();
        ProbeSection {
            probe_set_size: d.probe_set_size,
            probe_seed: d.probe_seed,
            power: d.power,
            with_hessian: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; cascades into any stage seed not set explicitly.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub string: StringConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            probe: ProbeSection::default(),
            string: StringConfig::default(),
        }
    }
}

/// Parse `key=value` and write the value at the dotted path, creating
/// intermediate tables. The value is parsed as TOML; anything that fails to
/// parse (a bare word like `cifar10`) is taken as a string.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(CliError::Usage(format!(
            "override {spec:?} is not of the form key=value"
        )));
    };
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("override {spec:?} has an empty key")));
    }
    let value = match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        Ok(toml::Value::Table(t)) => t["v"].clone(),
        _ => toml::Value::String(raw.trim().to_string()),
    };
    let mut cursor = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override {key:?}: {part:?} is not a table"))
        })?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| {
        CliError::Config(format!("override {key:?} descends into a non-table value"))
    })?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// True if the dotted path exists in the merged document (i.e. the user set
/// it, as opposed to serde filling a default).
fn is_set(doc: &toml::Value, path: &[&str]) -> bool {
    let mut cursor = doc;
    for part in path {
        match cursor.get(part) {
            Some(v) => cursor = v,
            None => return false,
        }
    }
    true
}

/// Load the configuration: read `path` (or start empty), apply `overrides`
/// in order, deserialize, then cascade the master seed into stage seeds the
/// user left untouched.
pub fn load(path: Option<&Path>, overrides: &[String], seed_flag: Option<u64>) -> Result<Config> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            text.parse::<toml::Value>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::map::Map::new()),
    };
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(seed) = seed_flag {
        apply_override(&mut doc, &format!("seed={seed}"))?;
    }

    let mut cfg: Config = doc
        .clone()
        .try_into()
        .map_err(|e| CliError::Config(e.to_string()))?;

    // Cascade the master seed into stages whose seed was not pinned.
    for (path, slot) in [
        (&["train", "cnn", "seed"][..], &mut cfg.train.cnn.seed),
        (&["train", "relax", "seed"][..], &mut cfg.train.relax.seed),
        (&["string", "seed"][..], &mut cfg.string.seed),
        (&["probe", "probe_seed"][..], &mut cfg.probe.probe_seed),
        (&["probe", "power", "seed"][..], &mut cfg.probe.power.seed),
    ] {
        if !is_set(&doc, path) {
            *slot = cfg.seed;
        }
    }
    Ok(cfg)
}
