//! First-order parameter updates. Every update is elementwise, so the
//! compiler may vectorize freely without changing results; state vectors are
//! plain `f32` slabs that serialize into checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Which update rule a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Mutable optimizer state. Plain SGD carries none — `velocity` appears only
/// when momentum is switched on, which keeps "momentum = 0 has no hidden
/// state" inspectable rather than implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerState {
    Sgd {
        velocity: Option<Vec<f32>>,
    },
    Adam {
        m: Vec<f32>,
        v: Vec<f32>,
        step: u64,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, momentum: f32, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd {
                velocity: (momentum != 0.0).then(|| vec![0.0; n]),
            },
            OptimizerKind::Adam => OptimizerState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
        }
    }
}

/// θ ← θ − η·g, elementwise. The momentum- and decay-free step.
pub fn sgd_step(theta: &mut ParamVector, grad: &ParamVector, eta: f32) {
    debug_assert_eq!(theta.len(), grad.len());
    for (t, g) in theta.values_mut().iter_mut().zip(grad.values()) {
        *t -= eta * *g;
    }
}

/// Bias-corrected Adam with the standard defaults (β₁ = 0.9, β₂ = 0.999,
/// eps = 1e−8). Correction factors are computed once per step in f64; the
/// per-coordinate arithmetic stays in f32.
pub fn adam_step(
    theta: &mut ParamVector,
    grad: &ParamVector,
    state: &mut OptimizerState,
    eta: f32,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    let OptimizerState::Adam { m, v, step } = state else {
        return Err(Error::InvalidArgument(
            "adam_step needs Adam optimizer state".into(),
        ));
    };
    if m.len() != theta.len() || grad.len() != theta.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters", theta.len()),
            format!("{} state / {} gradient", m.len(), grad.len()),
        ));
    }
    *step += 1;
    let (b1, b2) = betas;
    let bc1 = 1.0 / (1.0 - b1.powi(*step as i32));
    let bc2 = 1.0 / (1.0 - b2.powi(*step as i32));
    let (b1f, b2f) = (b1 as f32, b2 as f32);
    let (bc1f, bc2f, epsf) = (bc1 as f32, bc2 as f32, eps as f32);
    for ((t, g), (mi, vi)) in theta
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mi = b1f * *mi + (1.0 - b1f) * *g;
        *vi = b2f * *vi + (1.0 - b2f) * *g * *g;
        let mhat = *mi * bc1f;
        let vhat = *vi * bc2f;
        *t -= eta * mhat / (vhat.sqrt() + epsf);
    }
    Ok(())
}

/// One update as configured: optional decoupled-from-nothing L2 term folded
/// into the gradient (g ← g + wd·θ), optional heavy-ball momentum for SGD.
/// `grad` is consumed scratch space when decay or momentum needs it.
pub fn apply_update(
    theta: &mut ParamVector,
    grad: &ParamVector,
    state: &mut OptimizerState,
    eta: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    match state {
        OptimizerState::Sgd { velocity } => match velocity {
            None => {
                if weight_decay == 0.0 {
                    sgd_step(theta, grad, eta);
                } else {
                    for (t, g) in theta.values_mut().iter_mut().zip(grad.values()) {
                        *t -= eta * (*g + weight_decay * *t);
                    }
                }
            }
            Some(vel) => {
                if vel.len() != theta.len() {
                    return Err(Error::shape(
                        "sgd momentum state",
                        format!("{}", theta.len()),
                        format!("{}", vel.len()),
                    ));
                }
                for ((t, g), v) in theta
                    .values_mut()
                    .iter_mut()
                    .zip(grad.values())
                    .zip(vel.iter_mut())
                {
                    *v = momentum * *v + (*g + weight_decay * *t);
                    *t -= eta * *v;
                }
            }
        },
        OptimizerState::Adam { .. } => {
            if weight_decay == 0.0 {
                adam_step(theta, grad, state, eta, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
            } else {
                let mut decayed = grad.clone();
                let snapshot: Vec<f32> = theta.values().to_vec();
                for (g, t) in decayed.values_mut().iter_mut().zip(&snapshot) {
                    *g += weight_decay * *t;
                }
                adam_step(
                    theta,
                    &decayed,
                    state,
                    eta,
                    (ADAM_BETA1, ADAM_BETA2),
                    ADAM_EPS,
                )?;
            }
        }
    }
    Ok(())
}
