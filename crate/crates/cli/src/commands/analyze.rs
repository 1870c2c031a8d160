//! Measurement commands over saved checkpoints: probes, masked evaluation,
//! interpolation profiles, and dense-row heatmaps.

use std::path::Path;

use efcn_core::checkpoint::Checkpoint;
use efcn_core::embed::{delta, mask_apply, EmbeddingMap, Keep};
use efcn_core::interp::{linear_path, output_profile, string_relax, weight_profile, PathMethod};
use efcn_core::nn::{build_fcn_from, ModelSpec};
use efcn_core::probes::{self, ProbePhase};
use efcn_core::train;
use efcn_core::ParamVector;

use super::{load_checkpoint, Ctx};
use crate::errors::{CliError, Result};
use crate::output::ProbeRow;
use crate::{InterpMethod, KeepArg, PhaseArg, ProbeWhat};

/// The embedding map recorded in a checkpoint, or an error naming what is
/// missing.
fn require_map(ckpt: &Checkpoint, path: &Path, why: &str) -> Result<EmbeddingMap> {
    match &ckpt.meta.source_cnn {
        Some(spec) => Ok(EmbeddingMap::build(spec)?),
        None => Err(CliError::Runtime(format!(
            "{} records no source architecture; {why} needs an embedded checkpoint \
             (produced by `embed`, `relax`, or `protocol`)",
            path.display()
        ))),
    }
}

pub fn probe(
    ctx: &Ctx,
    what: ProbeWhat,
    from: &Path,
    tw: Option<usize>,
    phase: PhaseArg,
) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let ckpt = load_checkpoint(from)?;
    let model = ckpt.meta.model.clone();
    let theta = ckpt.theta()?;
    let map = match &ckpt.meta.source_cnn {
        Some(spec) => Some(EmbeddingMap::build(spec)?),
        None => None,
    };
    if map.is_none() && matches!(what, ProbeWhat::Delta) {
        return Err(require_map(&ckpt, from, "--what delta").unwrap_err());
    }
    let t_w = tw.or(ckpt.meta.t_w).unwrap_or(ckpt.meta.epoch);
    let phase = match phase {
        PhaseArg::AtEmbedding => ProbePhase::AtEmbedding,
        PhaseArg::AfterTraining => ProbePhase::AfterTraining,
    };

    let probe_batch = probes::probe_set(
        &train_set,
        ctx.cfg.probe.probe_set_size,
        ctx.cfg.probe.probe_seed,
    )?;
    let want_grad = matches!(what, ProbeWhat::Grad | ProbeWhat::All);
    let want_hessian = matches!(what, ProbeWhat::Hessian | ProbeWhat::All);
    let want_delta = matches!(what, ProbeWhat::Delta | ProbeWhat::All);

    let grad_norm = if want_grad {
        Some(probes::grad_norm(&model, &theta, &probe_batch)?)
    } else {
        None
    };
    let mut lambda_meta = None;
    let lambda_max = if want_hessian {
        let (lambda, meta) = probes::lambda_max(&model, &theta, &probe_batch, &ctx.cfg.probe.power)?;
        lambda_meta = Some(meta);
        Some(lambda)
    } else {
        None
    };
    let (mut dev, mut acc_local, mut acc_offlocal) = (None, None, None);
    if want_delta {
        if let Some(map) = &map {
            dev = Some(delta(&theta, map.local_mask())?);
            acc_local = Some(probes::masked_accuracy(
                &model,
                &theta,
                map,
                Keep::Local,
                &test_set,
            )?);
            acc_offlocal = Some(probes::masked_accuracy(
                &model,
                &theta,
                map,
                Keep::OffLocal,
                &test_set,
            )?);
        }
    }
    let (_, test_acc) = train::evaluate(&model, &theta, &test_set, train::EVAL_BATCH)?;

    let row = ProbeRow {
        t_w,
        phase,
        grad_norm,
        lambda_max,
        delta: dev,
        test_acc: Some(test_acc),
        test_acc_local: acc_local,
        test_acc_offlocal: acc_offlocal,
    };
    ctx.run.write_probes("probes.csv", &[row])?;
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "checkpoint": from.display().to_string(),
            "t_w": t_w,
            "phase": phase.to_string(),
            "grad_norm": grad_norm,
            "lambda_max": lambda_max,
            "lambda_iterations": lambda_meta.as_ref().map(|m| m.iterations),
            "lambda_converged": lambda_meta.as_ref().map(|m| m.converged),
            "lambda_residual": lambda_meta.as_ref().map(|m| m.residual),
            "delta": dev,
            "test_accuracy": test_acc,
            "test_accuracy_local_only": acc_local,
            "test_accuracy_offlocal_only": acc_offlocal,
        }),
    )?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    say!(
        "probe t_w={t_w} {phase}: grad {} lambda {} delta {} test acc {test_acc:.4} ({})",
        fmt(grad_norm),
        fmt(lambda_max),
        fmt(dev),
        ctx.run.path().display()
    );
    Ok(())
}

pub fn mask_eval(ctx: &Ctx, keep: KeepArg, from: &Path) -> Result<()> {
    let (_train_set, test_set) = ctx.datasets()?;
    let ckpt = load_checkpoint(from)?;
    let map = require_map(&ckpt, from, "mask-eval")?;
    let theta = ckpt.theta()?;
    let keep_core = match keep {
        KeepArg::Local => Keep::Local,
        KeepArg::Offlocal => Keep::OffLocal,
    };
    let masked = mask_apply(&theta, map.local_mask(), keep_core)?;
    let (test_loss, test_acc) =
        train::evaluate(&ckpt.meta.model, &masked, &test_set, train::EVAL_BATCH)?;
    let keep_name = match keep {
        KeepArg::Local => "local",
        KeepArg::Offlocal => "offlocal",
    };
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "checkpoint": from.display().to_string(),
            "keep": keep_name,
            "test_loss": test_loss,
            "test_accuracy": test_acc,
            "delta": delta(&theta, map.local_mask())?,
        }),
    )?;
    say!(
        "mask-eval keep={keep_name}: test accuracy {test_acc:.4}, loss {test_loss:.4} ({})",
        ctx.run.path().display()
    );
    Ok(())
}

/// Bring two checkpoints onto one architecture for weight-space work: equal
/// specs pass through; a convolutional model paired with its own dense image
/// is embedded first.
fn unify(
    a: &Checkpoint,
    b: &Checkpoint,
) -> Result<(ModelSpec, ParamVector, ParamVector)> {
    if a.meta.model == b.meta.model {
        return Ok((a.meta.model.clone(), a.theta()?, b.theta()?));
    }
    if let Ok(fcn_a) = build_fcn_from(&a.meta.model) {
        if fcn_a == b.meta.model {
            let map = EmbeddingMap::build(&a.meta.model)?;
            return Ok((b.meta.model.clone(), map.apply(&a.theta()?)?, b.theta()?));
        }
    }
    if let Ok(fcn_b) = build_fcn_from(&b.meta.model) {
        if fcn_b == a.meta.model {
            let map = EmbeddingMap::build(&b.meta.model)?;
            return Ok((a.meta.model.clone(), a.theta()?, map.apply(&b.theta()?)?));
        }
    }
    Err(CliError::Runtime(
        "checkpoints have incompatible architectures; weight-space interpolation needs equal \
         specs, or a convolutional checkpoint paired with its own embedded dense model \
         (use --method output to compare arbitrary models)"
            .into(),
    ))
}

pub fn interp(ctx: &Ctx, method: InterpMethod, n: usize, a: &Path, b: &Path) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let ckpt_a = load_checkpoint(a)?;
    let ckpt_b = load_checkpoint(b)?;

    let rows = match method {
        InterpMethod::Output => output_profile(
            &ckpt_a.meta.model,
            &ckpt_a.theta()?,
            &ckpt_b.meta.model,
            &ckpt_b.theta()?,
            n,
            &train_set,
            &test_set,
        )?,
        InterpMethod::Linear | InterpMethod::String => {
            let (model, theta_a, theta_b) = unify(&ckpt_a, &ckpt_b)?;
            let path = linear_path(&theta_a, &theta_b, n)?;
            let (method, path) = match method {
                InterpMethod::Linear => (PathMethod::Linear, path),
                InterpMethod::String => (
                    PathMethod::String,
                    string_relax(&path, &ctx.cfg.string, &model, &train_set)?,
                ),
                InterpMethod::Output => unreachable!(),
            };
            weight_profile(method, &path, &model, &train_set, &test_set)?
        }
    };

    ctx.run.write_paths("paths.csv", &rows)?;
    let end_max = rows
        .first()
        .map(|r| r.train_loss)
        .unwrap_or(0.0)
        .max(rows.last().map(|r| r.train_loss).unwrap_or(0.0));
    let peak = rows.iter().map(|r| r.train_loss).fold(f64::MIN, f64::max);
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "method": rows.first().map(|r| r.method.to_string()),
            "points": rows.len(),
            "peak_train_loss": peak,
            "barrier": peak - end_max,
        }),
    )?;
    say!(
        "interp {} n={}: peak train loss {peak:.4}, barrier {:.4} ({})",
        rows.first().map(|r| r.method.to_string()).unwrap_or_default(),
        rows.len(),
        peak - end_max,
        ctx.run.path().display()
    );
    Ok(())
}

pub fn filters(ctx: &Ctx, layer: usize, channel: usize, pos: &str, from: &Path) -> Result<()> {
    let (i, j) = parse_pos(pos)?;
    let ckpt = load_checkpoint(from)?;
    let map = require_map(&ckpt, from, "filters")?;
    let theta = ckpt.theta()?;
    let row = probes::dense_row(&theta, &map, layer, channel, (i, j))?;
    let heat = probes::filter_heatmap(&theta, &map, layer, channel, (i, j))?;

    let shape = row.shape().to_vec();
    let (c_in, h, w) = (shape[0], shape[1], shape[2]);
    let mut writer = csv::Writer::from_path(ctx.run.path().join("filters.csv"))?;
    writer.write_record(["c_in", "i_in", "j_in", "weight", "log_abs"])?;
    for c in 0..c_in {
        for ii in 0..h {
            for jj in 0..w {
                let idx = (c * h + ii) * w + jj;
                writer.write_record([
                    c.to_string(),
                    ii.to_string(),
                    jj.to_string(),
                    format!("{}", row.data()[idx]),
                    format!("{}", heat.data()[idx]),
                ])?;
            }
        }
    }
    writer.flush().map_err(std::io::Error::from)?;

    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "checkpoint": from.display().to_string(),
            "layer": layer,
            "channel": channel,
            "position": [i, j],
            "row_shape": shape,
        }),
    )?;
    say!(
        "filters layer={layer} channel={channel} pos={i},{j}: row shape {shape:?} ({})",
        ctx.run.path().display()
    );
    Ok(())
}

fn parse_pos(pos: &str) -> Result<(usize, usize)> {
    let err = || {
        CliError::Usage(format!(
            "--pos wants \"i,j\" (two comma-separated indices), got {pos:?}"
        ))
    };
    let (i, j) = pos.split_once(',').ok_or_else(err)?;
    Ok((
        i.trim().parse().map_err(|_| err())?,
        j.trim().parse().map_err(|_| err())?,
    ))
}
