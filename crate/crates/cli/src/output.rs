//! Run-directory management and the fixed CSV schemas.
//!
//! Run directories are append-only: creating one that already exists is an
//! error, so a rerun can never silently overwrite results. The three CSV
//! schemas are pinned:
//!   curves:  run_id, phase, epoch, split, loss, accuracy
//!   probes:  t_w, phase, grad_norm, lambda_max, delta, test_acc,
//!            test_acc_local, test_acc_offlocal
//!   paths:   method, alpha, train_loss, test_accuracy

use std::path::{Path, PathBuf};

use serde::Serialize;

use efcn_core::checkpoint::{self, Checkpoint};
use efcn_core::interp::ProfileRow;
use efcn_core::probes::{ProbePhase, ProbeReport};
use efcn_core::train::EpochRecord;

use crate::errors::{CliError, Result};

pub struct RunDir {
    path: PathBuf,
    run_id: String,
}

impl RunDir {
    /// Create `root/run_id`, failing if the directory already exists.
    pub fn create(root: &Path, run_id: &str) -> Result<RunDir> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) {
            return Err(CliError::Usage(format!(
                "run id {run_id:?} must be a nonempty single path component"
            )));
        }
        let path = root.join(run_id);
        if path.exists() {
            return Err(CliError::Runtime(format!(
                "run directory {} already exists; runs are append-only — pick a fresh --run-id",
                path.display()
            )));
        }
        std::fs::create_dir_all(&path)?;
        Ok(RunDir {
            path,
            run_id: run_id.to_string(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serializing {name}: {e}")))?;
        std::fs::write(self.path.join(name), text + "\n")?;
        Ok(())
    }

    pub fn save_checkpoint(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        checkpoint::save(self.path.join(name), ckpt)?;
        Ok(())
    }

    /// Write one training phase's curves. Epoch 0 rows carry the pre-training
    /// evaluations when they are known.
    pub fn write_curves(
        &self,
        file: &str,
        phase: &str,
        initial: Option<(f64, f64)>,
        records: &[EpochRecord],
    ) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path.join(file))?;
        w.write_record(["run_id", "phase", "epoch", "split", "loss", "accuracy"])?;
        if let Some((train_loss, test_accuracy)) = initial {
            self.curve_row(&mut w, phase, 0, "train", Some(train_loss), None)?;
            self.curve_row(&mut w, phase, 0, "test", None, Some(test_accuracy))?;
        }
        for r in records {
            self.curve_row(&mut w, phase, r.epoch, "train", Some(r.train_loss), None)?;
            if r.test_loss.is_some() || r.test_accuracy.is_some() {
                self.curve_row(&mut w, phase, r.epoch, "test", r.test_loss, r.test_accuracy)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn curve_row(
        &self,
        w: &mut csv::Writer<std::fs::File>,
        phase: &str,
        epoch: usize,
        split: &str,
        loss: Option<f64>,
        accuracy: Option<f64>,
    ) -> Result<()> {
        w.write_record([
            self.run_id.as_str(),
            phase,
            &epoch.to_string(),
            split,
            &opt(loss),
            &opt(accuracy),
        ])?;
        Ok(())
    }

    pub fn write_probes(&self, file: &str, rows: &[ProbeRow]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path.join(file))?;
        w.write_record([
            "t_w",
            "phase",
            "grad_norm",
            "lambda_max",
            "delta",
            "test_acc",
            "test_acc_local",
            "test_acc_offlocal",
        ])?;
        for r in rows {
            w.write_record([
                r.t_w.to_string(),
                r.phase.to_string(),
                opt(r.grad_norm),
                opt(r.lambda_max),
                opt(r.delta),
                opt(r.test_acc),
                opt(r.test_acc_local),
                opt(r.test_acc_offlocal),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_paths(&self, file: &str, rows: &[ProfileRow]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path.join(file))?;
        w.write_record(["method", "alpha", "train_loss", "test_accuracy"])?;
        for r in rows {
            w.write_record([
                r.method.to_string(),
                r.alpha.to_string(),
                r.train_loss.to_string(),
                r.test_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One probes.csv row; every measurement is optional so a row can carry
/// exactly what was computed.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub t_w: usize,
    pub phase: ProbePhase,
    pub grad_norm: Option<f64>,
    pub lambda_max: Option<f64>,
    pub delta: Option<f64>,
    pub test_acc: Option<f64>,
    pub test_acc_local: Option<f64>,
    pub test_acc_offlocal: Option<f64>,
}

impl From<&ProbeReport> for ProbeRow {
    fn from(r: &ProbeReport) -> Self {
        ProbeRow {
            t_w: r.t_w,
            phase: r.phase,
            grad_norm: Some(r.grad_norm),
            lambda_max: Some(r.lambda_max),
            delta: r.delta,
            test_acc: Some(r.test_accuracy),
            test_acc_local: r.test_accuracy_local_only,
            test_acc_offlocal: r.test_accuracy_offlocal_only,
        }
    }
}

/// Summary fields shared by the training commands.
#[derive(Serialize)]
pub struct RunSummary {
    pub phase: String,
    pub initial_train_loss: f64,
    pub initial_test_accuracy: f64,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
}

impl RunSummary {
    /// Summarize a run from its pre-training evaluation and epoch records.
    /// A run of zero epochs keeps its initial numbers as finals.
    pub fn new(phase: &str, initial: (f64, f64), records: &[EpochRecord]) -> RunSummary {
        RunSummary {
            phase: phase.to_string(),
            initial_train_loss: initial.0,
            initial_test_accuracy: initial.1,
            final_train_loss: records.last().map_or(initial.0, |r| r.train_loss),
            final_test_accuracy: records
                .iter()
                .rev()
                .find_map(|r| r.test_accuracy)
                .unwrap_or(initial.1),
        }
    }
}
