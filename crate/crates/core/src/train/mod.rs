//! Minibatch training, snapshotting, and the relax-time protocol: train a
//! CNN, snapshot it along the way, embed every snapshot into the equivalent
//! dense network, train those unconstrained, and race a from-scratch dense
//! network of the same shape.
//!
//! Determinism: one run owns two generator streams — minibatch shuffling and
//! dropout — both derived from the run seed. A [`Snapshot`] captures both
//! states plus parameters and optimizer state at an epoch boundary, so
//! resuming reproduces the uninterrupted run bit for bit.

mod optim;

pub use optim::{
    adam_step, apply_update, sgd_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::nn::{self, init_params, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream, DetRng, RngState};

/// Hyperparameters for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// When false, the seed is drawn from OS entropy at run start; all other
    /// machinery is identical (and snapshots still replay, since they store
    /// generator states rather than the seed).
    pub deterministic: bool,
    /// Number of log-spaced snapshots (0 = none, otherwise ≥ 2 so both
    /// endpoints are included).
    pub snapshot_count: usize,
    /// Test-set evaluation cadence in epochs; the final epoch is always
    /// evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            batch_size: 250,
            epochs: 30,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            deterministic: true,
            snapshot_count: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        if self.snapshot_count == 1 {
            return Err(Error::InvalidArgument(
                "snapshot count must be 0 (disabled) or ≥ 2 (both endpoints)".into(),
            ));
        }
        if self.eval_every < 1 {
            return Err(Error::InvalidArgument(
                "evaluation cadence must be ≥ 1 epoch".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to continue training from an epoch boundary, plus the
/// evaluations that make the snapshot meaningful on its own.
#[derive(Clone, Debug)]
pub struct Snapshot {
    /// Epoch boundary the snapshot was taken at (0 = before any training).
    pub t_w: usize,
    pub theta: ParamVector,
    pub opt_state: OptimizerState,
    pub shuffle_rng: RngState,
    pub dropout_rng: RngState,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

/// One per-epoch curve point. Test fields are present on evaluation epochs
/// (cadence hits and the final epoch) and absent otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of minibatch losses seen during the epoch, weighted by batch
    /// size (the loss each example was charged at the parameters of its own
    /// step).
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub records: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
}

/// Log-spaced snapshot boundaries: {0} ∪ {round(T^{i/(k−2)}) : i = 0..k−2},
/// deduplicated and ascending, so the first element is 0 and the last is T.
pub fn log_spaced_epochs(epochs: usize, k: usize) -> Result<Vec<usize>> {
    if epochs < 1 || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "log-spaced schedule needs epochs ≥ 1 and k ≥ 2, got ({epochs}, {k})"
        )));
    }
    let mut out = std::collections::BTreeSet::new();
    out.insert(0);
    if k == 2 {
        out.insert(epochs);
    } else {
        let m = (k - 2) as f64;
        for i in 0..=(k - 2) {
            let e = (epochs as f64).powf(i as f64 / m).round() as usize;
            out.insert(e.min(epochs));
        }
    }
    Ok(out.into_iter().collect())
}

/// Default evaluation chunk size: large enough to amortize dispatch, small
/// enough to keep activation memory flat on any dataset.
pub const EVAL_BATCH: usize = 512;

/// Mean loss and accuracy over a full dataset, evaluated in fixed-order
/// batches with dropout inactive.
pub fn evaluate(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
    }
    let n = data.len();
    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + batch_size).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let batch = data.gather(&idx)?;
        let logits = nn::forward(model, theta, &batch.images)?;
        let (loss, _) = nn::softmax_cross_entropy(&logits, &batch.labels)?;
        total_loss += loss * (hi - lo) as f64;
        let preds = nn::predictions(&logits);
        correct += preds
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        lo = hi;
    }
    Ok((total_loss / n as f64, correct as f64 / n as f64))
}

/// The order training visits examples in one epoch: a fresh Fisher–Yates
/// permutation, partitioned into batches by the caller (remainder kept).
fn epoch_order(shuffle: &mut DetRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle.shuffle(&mut idx);
    idx
}

struct LoopState {
    theta: ParamVector,
    opt: OptimizerState,
    shuffle: DetRng,
    dropout: DetRng,
}

fn take_snapshot(
    model: &ModelSpec,
    state: &LoopState,
    t_w: usize,
    train_set: &Dataset,
    test_set: &Dataset,
    batch_size: usize,
) -> Result<Snapshot> {
    let (train_loss, _) = evaluate(model, &state.theta, train_set, batch_size)?;
    let (_, test_accuracy) = evaluate(model, &state.theta, test_set, batch_size)?;
    Ok(Snapshot {
        t_w,
        theta: state.theta.clone(),
        opt_state: state.opt.clone(),
        shuffle_rng: state.shuffle.state(),
        dropout_rng: state.dropout.state(),
        train_loss,
        test_accuracy,
    })
}

/// Epochs `start+1 ..= cfg.epochs` of shuffled-minibatch optimization on a
/// prepared loop state. Snapshots are taken at every schedule boundary ≥
/// `start` (so resuming re-emits the boundary it started from).
fn run_epochs(
    model: &ModelSpec,
    mut state: LoopState,
    start: usize,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    schedule: &[usize],
) -> Result<TrainOutcome> {
    let n = train_set.len();
    let epochs = cfg.epochs;
    let mut records = Vec::with_capacity(epochs.saturating_sub(start));
    let mut snapshots = Vec::new();

    for boundary in start..=epochs {
        if schedule.contains(&boundary) {
            snapshots.push(take_snapshot(
                model,
                &state,
                boundary,
                train_set,
                test_set,
                cfg.batch_size,
            )?);
        }
        if boundary == epochs {
            break;
        }
        let epoch = boundary + 1;
        let order = epoch_order(&mut state.shuffle, n);
        let mut epoch_loss = 0.0f64;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.gather(chunk)?;
            let step = nn::grad_train(model, &state.theta, &batch, &mut state.dropout);
            let (loss, grad) = match step {
                Ok(ok) => ok,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged { epoch, batch: bi })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            apply_update(
                &mut state.theta,
                &grad,
                &mut state.opt,
                cfg.lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let eval_now = epoch % cfg.eval_every == 0 || epoch == epochs;
        let (test_loss, test_accuracy) = if eval_now {
            let (l, a) = evaluate(model, &state.theta, test_set, cfg.batch_size)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        records.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            test_loss,
            test_accuracy,
        });
    }
    Ok(TrainOutcome {
        theta: state.theta,
        records,
        snapshots,
    })
}

fn snapshot_schedule(cfg: &TrainConfig) -> Result<Vec<usize>> {
    if cfg.snapshot_count < 2 {
        Ok(Vec::new())
    } else if cfg.epochs == 0 {
        Ok(vec![0])
    } else {
        log_spaced_epochs(cfg.epochs, cfg.snapshot_count)
    }
}

/// Train `model` from `theta0`. Epoch curves are recorded after every epoch;
/// snapshots are taken at log-spaced boundaries when `snapshot_count` ≥ 2.
pub fn train(
    model: &ModelSpec,
    theta0: &ParamVector,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = snapshot_schedule(cfg)?;
    let seed = if cfg.deterministic {
        cfg.seed
    } else {
        rand::random::<u64>()
    };
    let state = LoopState {
        theta: theta0.clone(),
        opt: OptimizerState::new(cfg.optimizer, cfg.momentum, theta0.len()),
        shuffle: DetRng::new(seed, stream::SHUFFLE, 0),
        dropout: DetRng::new(seed, stream::DROPOUT, 0),
    };
    run_epochs(model, state, 0, train_set, test_set, cfg, &schedule)
}

/// Continue a run from a snapshot to `cfg.epochs`. In deterministic mode the
/// continuation is bitwise identical to the uninterrupted run.
pub fn resume(
    model: &ModelSpec,
    snap: &Snapshot,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if snap.t_w > cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "snapshot at boundary {} lies past the configured {} epochs",
            snap.t_w, cfg.epochs
        )));
    }
    let schedule = snapshot_schedule(cfg)?;
    let state = LoopState {
        theta: snap.theta.clone(),
        opt: snap.opt_state.clone(),
        shuffle: DetRng::restore(&snap.shuffle_rng),
        dropout: DetRng::restore(&snap.dropout_rng),
    };
    run_epochs(model, state, snap.t_w, train_set, test_set, cfg, &schedule)
}

/// Which run a curve or final solution belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunLabel {
    Cnn,
    Fcn,
    Efcn { t_w: usize },
}

impl std::fmt::Display for RunLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunLabel::Cnn => write!(f, "cnn"),
            RunLabel::Fcn => write!(f, "fcn"),
            RunLabel::Efcn { t_w } => write!(f, "efcn_tw{t_w}"),
        }
    }
}

/// One trained model inside a protocol report.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub records: Vec<EpochRecord>,
    pub theta: ParamVector,
    pub initial_train_loss: f64,
    pub initial_test_accuracy: f64,
}

impl TrainedRun {
    /// Accuracy at the last evaluated epoch (initial accuracy for a run of
    /// zero epochs).
    pub fn final_test_accuracy(&self) -> f64 {
        self.records
            .iter()
            .rev()
            .find_map(|r| r.test_accuracy)
            .unwrap_or(self.initial_test_accuracy)
    }

    pub fn final_train_loss(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.train_loss)
            .unwrap_or(self.initial_train_loss)
    }
}

/// Consolidated result of the five protocol steps.
#[derive(Clone, Debug)]
pub struct RunReport {
    /// Snapshot boundaries actually used (ascending, 0 first, T_cnn last).
    pub schedule: Vec<usize>,
    pub cnn: TrainedRun,
    pub snapshots: Vec<Snapshot>,
    /// One relaxed run per snapshot, keyed by t_w, in schedule order.
    pub efcn: Vec<(usize, TrainedRun)>,
    pub fcn: TrainedRun,
}

/// Protocol configuration: the source-model run (snapshots on) and the
/// relaxed run settings shared by every dense training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub cnn: TrainConfig,
    pub relax: TrainConfig,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            cnn: TrainConfig {
                lr: 0.1,
                epochs: 30,
                snapshot_count: 10,
                ..TrainConfig::default()
            },
            relax: TrainConfig {
                lr: 0.01,
                epochs: 20,
                snapshot_count: 0,
                ..TrainConfig::default()
            },
        }
    }
}

/// The five-step relax-time protocol. Every dense run (embedded or fresh)
/// shares the relax settings, including the shuffle seed, so the comparisons
/// are paired sample-for-sample.
pub fn relax_protocol(
    cnn_spec: &ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &RelaxConfig,
) -> Result<RunReport> {
    cfg.cnn.validate()?;
    cfg.relax.validate()?;
    if cfg.cnn.snapshot_count < 2 {
        return Err(Error::InvalidArgument(
            "the protocol needs snapshot_count ≥ 2 on the source run".into(),
        ));
    }

    // Step 1 + 2: train the source model, snapshotting along the way.
    let theta0 = init_params(cnn_spec, cfg.cnn.seed)?;
    let (init_loss, init_acc) = (
        evaluate(cnn_spec, &theta0, train_set, cfg.cnn.batch_size)?.0,
        evaluate(cnn_spec, &theta0, test_set, cfg.cnn.batch_size)?.1,
    );
    let cnn_out = train(cnn_spec, &theta0, train_set, test_set, &cfg.cnn)?;
    let schedule: Vec<usize> = cnn_out.snapshots.iter().map(|s| s.t_w).collect();
    let cnn_run = TrainedRun {
        records: cnn_out.records,
        theta: cnn_out.theta,
        initial_train_loss: init_loss,
        initial_test_accuracy: init_acc,
    };

    // Step 3 + 4: embed every snapshot and train the result unconstrained.
    let map = EmbeddingMap::build(cnn_spec)?;
    let fcn_spec = map.fcn_spec().clone();
    let relax_cfg = TrainConfig {
        snapshot_count: 0,
        ..cfg.relax.clone()
    };
    let mut efcn = Vec::with_capacity(cnn_out.snapshots.len());
    for snap in &cnn_out.snapshots {
        let theta_e = map.apply(&snap.theta)?;
        let (l0, a0) = (
            evaluate(&fcn_spec, &theta_e, train_set, relax_cfg.batch_size)?.0,
            evaluate(&fcn_spec, &theta_e, test_set, relax_cfg.batch_size)?.1,
        );
        let out = train(&fcn_spec, &theta_e, train_set, test_set, &relax_cfg)?;
        efcn.push((
            snap.t_w,
            TrainedRun {
                records: out.records,
                theta: out.theta,
                initial_train_loss: l0,
                initial_test_accuracy: a0,
            },
        ));
    }

    // Step 5: a fresh dense network of the same shape, same budget.
    let theta_f = init_params(&fcn_spec, relax_cfg.seed)?;
    let (fl0, fa0) = (
        evaluate(&fcn_spec, &theta_f, train_set, relax_cfg.batch_size)?.0,
        evaluate(&fcn_spec, &theta_f, test_set, relax_cfg.batch_size)?.1,
    );
    let fcn_out = train(&fcn_spec, &theta_f, train_set, test_set, &relax_cfg)?;
    let fcn_run = TrainedRun {
        records: fcn_out.records,
        theta: fcn_out.theta,
        initial_train_loss: fl0,
        initial_test_accuracy: fa0,
    };

    Ok(RunReport {
        schedule,
        cnn: cnn_run,
        snapshots: cnn_out.snapshots,
        efcn,
        fcn: fcn_run,
    })
}
