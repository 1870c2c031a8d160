//! Dataset resolution: the configured source plus the directory fallback
//! chain (flag → config → `EFCN_DATA_DIR`).

use std::path::{Path, PathBuf};

use efcn_core::data::{load_cifar10, load_cifar100, Dataset};

use crate::config::{Config, DataSource};
use crate::errors::{CliError, Result};

/// Environment variable naming the default CIFAR directory.
pub const DATA_DIR_ENV: &str = "EFCN_DATA_DIR";

fn resolve_dir(cfg: &Config, flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if let Some(p) = &cfg.data.dir {
        return Ok(p.clone());
    }
    if let Some(p) = std::env::var_os(DATA_DIR_ENV) {
        return Ok(PathBuf::from(p));
    }
    Err(CliError::Config(format!(
        "data.source is {:?} but no directory is set: pass --data-dir, set data.dir in the config, or export {DATA_DIR_ENV}",
        cfg.data.source
    )))
}

/// Load (train, test) per the configuration. Synthetic data is generated
/// from the master seed, so config + seed determine every pixel.
pub fn load(cfg: &Config, dir_flag: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match cfg.data.source {
        DataSource::Synthetic => {
            Ok(efcn_core::data::gen_synthetic(&cfg.data.synthetic, cfg.seed)?)
        }
        DataSource::Cifar10 => Ok(load_cifar10(&resolve_dir(cfg, dir_flag)?)?),
        DataSource::Cifar100 => Ok(load_cifar100(&resolve_dir(cfg, dir_flag)?)?),
    }
}
