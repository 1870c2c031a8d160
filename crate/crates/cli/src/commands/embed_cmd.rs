//! `embed`: turn a convolutional checkpoint into its exactly-equivalent
//! dense checkpoint, and record how equivalent it actually came out.

use std::path::Path;

use efcn_core::embed::{delta, EmbeddingMap};
use efcn_core::nn::{self, init_params};
use efcn_core::probes::probe_set;

use super::{embedded_checkpoint, load_checkpoint, Ctx};
use crate::errors::Result;

pub fn embed(ctx: &Ctx, from: Option<&Path>) -> Result<()> {
    let (train_set, _test_set) = ctx.datasets()?;

    // Source parameters: a checkpoint, or a fresh initialization at the
    // configured seed (an untrained embedding, t_w = 0).
    let (cnn_spec, theta_cnn, t_w, seed) = match from {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let theta = ckpt.theta()?;
            let t_w = ckpt.meta.t_w.unwrap_or(ckpt.meta.epoch);
            (ckpt.meta.model, theta, t_w, ckpt.meta.seed)
        }
        None => {
            let spec = ctx.cnn_spec(&train_set)?;
            let theta = init_params(&spec, ctx.cfg.seed)?;
            (spec, theta, 0, ctx.cfg.seed)
        }
    };

    let map = EmbeddingMap::build(&cnn_spec)?;
    let theta_e = map.apply(&theta_cnn)?;
    let fcn_spec = map.fcn_spec().clone();

    // Spot-check the equivalence on real inputs: both networks must produce
    // the same logits to float precision.
    let batch = probe_set(&train_set, 256, ctx.cfg.probe.probe_seed)?;
    let logits_cnn = nn::forward(&cnn_spec, &theta_cnn, &batch.images)?;
    let logits_fcn = nn::forward(&fcn_spec, &theta_e, &batch.images)?;
    let max_diff = logits_cnn
        .data()
        .iter()
        .zip(logits_fcn.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0f64, f64::max);

    ctx.run.save_checkpoint(
        &format!("efcn_tw{t_w}.efcn"),
        &embedded_checkpoint(&fcn_spec, &cnn_spec, &theta_e, t_w, seed, 0, None, None),
    )?;
    ctx.run.write_json(
        "equivalence.json",
        &serde_json::json!({
            "t_w": t_w,
            "probe_inputs": batch.labels.len(),
            "max_abs_logit_diff": max_diff,
            "cnn_params": theta_cnn.len(),
            "fcn_params": theta_e.len(),
            "delta": delta(&theta_e, map.local_mask())?,
        }),
    )?;
    say!(
        "embed t_w={t_w}: {} -> {} params, max |logit diff| {max_diff:.3e} ({})",
        theta_cnn.len(),
        theta_e.len(),
        ctx.run.path().display()
    );
    Ok(())
}
