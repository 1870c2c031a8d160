//! Subcommand implementations. Each takes the shared [`Ctx`] (resolved
//! config plus a freshly created run directory) and writes its artifacts
//! there; nothing is printed to stdout except short human-readable status
//! lines.

mod analyze;
mod embed_cmd;
mod misc;
mod train_cmd;

pub use analyze::{filters, interp, mask_eval, probe};
pub use embed_cmd::embed;
pub use misc::{synth, verify};
pub use train_cmd::{protocol, relax, train_cnn, train_fcn};

use std::path::Path;

use efcn_core::checkpoint::{self, Checkpoint, Meta, OptimizerMeta};
use efcn_core::data::Dataset;
use efcn_core::nn::{build_vanilla_cnn, ModelSpec};
use efcn_core::train::{EpochRecord, TrainConfig};
use efcn_core::ParamVector;

use crate::config::Config;
use crate::data;
use crate::errors::{CliError, Result};
use crate::output::RunDir;

/// Everything a subcommand needs: the resolved config, the run directory
/// its artifacts go into, and the dataset-directory flag.
pub struct Ctx<'a> {
    pub cfg: &'a Config,
    pub run: RunDir,
    pub data_dir: Option<&'a Path>,
}

impl Ctx<'_> {
    /// Train/test datasets per the data section of the config.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        data::load(self.cfg, self.data_dir)
    }

    /// The convolutional architecture for this dataset's shape.
    pub fn cnn_spec(&self, train_set: &Dataset) -> Result<ModelSpec> {
        Ok(build_vanilla_cnn(
            self.cfg.model.channels,
            train_set.input_shape(),
            train_set.classes,
        )?)
    }
}

/// Load a checkpoint, wrapping the error with the offending path.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// A parameters-only checkpoint for a finished run: no optimizer or RNG
/// state (it is a result, not a resume point).
pub fn plain_checkpoint(
    model: &ModelSpec,
    theta: &ParamVector,
    cfg: &TrainConfig,
    records: &[EpochRecord],
) -> Checkpoint {
    let mut arrays = std::collections::BTreeMap::new();
    arrays.insert(
        "theta".to_string(),
        checkpoint::Array::flat(theta.values().to_vec()),
    );
    Checkpoint {
        meta: Meta {
            model: model.clone(),
            epoch: cfg.epochs,
            seed: cfg.seed,
            optimizer: OptimizerMeta {
                kind: cfg.optimizer,
                step: 0,
            },
            shuffle_rng: None,
            dropout_rng: None,
            source_cnn: None,
            t_w: None,
            train_loss: records.last().map(|r| r.train_loss),
            test_accuracy: records.iter().rev().find_map(|r| r.test_accuracy),
        },
        arrays,
    }
}

/// A parameters-only checkpoint for an embedded model, tagged with the
/// source architecture and relax time so later commands can rebuild the map.
pub fn embedded_checkpoint(
    fcn_spec: &ModelSpec,
    cnn_spec: &ModelSpec,
    theta: &ParamVector,
    t_w: usize,
    seed: u64,
    epoch: usize,
    train_loss: Option<f64>,
    test_accuracy: Option<f64>,
) -> Checkpoint {
    let mut arrays = std::collections::BTreeMap::new();
    arrays.insert(
        "theta".to_string(),
        checkpoint::Array::flat(theta.values().to_vec()),
    );
    Checkpoint {
        meta: Meta {
            model: fcn_spec.clone(),
            epoch,
            seed,
            optimizer: OptimizerMeta {
                kind: efcn_core::train::OptimizerKind::Sgd,
                step: 0,
            },
            shuffle_rng: None,
            dropout_rng: None,
            source_cnn: Some(cnn_spec.clone()),
            t_w: Some(t_w),
            train_loss,
            test_accuracy,
        },
        arrays,
    }
}

/// Initial train loss and test accuracy of a parameter vector, evaluated
/// the same way the training loop evaluates.
pub fn initial_evals(
    model: &ModelSpec,
    theta: &ParamVector,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(f64, f64)> {
    let (train_loss, _) = efcn_core::train::evaluate(model, theta, train_set, efcn_core::train::EVAL_BATCH)?;
    let (_, test_acc) = efcn_core::train::evaluate(model, theta, test_set, efcn_core::train::EVAL_BATCH)?;
    Ok((train_loss, test_acc))
}
