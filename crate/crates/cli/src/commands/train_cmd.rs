//! Training commands: the source CNN, the scratch dense baseline, the
//! relax-at-T_W run, and the full protocol.

use std::path::Path;

use efcn_core::checkpoint::Checkpoint;
use efcn_core::embed::{delta, EmbeddingMap};
use efcn_core::nn::init_params;
use efcn_core::embed::Keep;
use efcn_core::probes::{self, ProbePhase};
use efcn_core::train::{self, relax_protocol, RelaxConfig, Snapshot, TrainOutcome};

use super::{embedded_checkpoint, load_checkpoint, plain_checkpoint, Ctx};
use crate::errors::{CliError, Result};
use crate::output::{ProbeRow, RunSummary};

pub fn train_cnn(ctx: &Ctx) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let model = ctx.cnn_spec(&train_set)?;
    let tcfg = &ctx.cfg.train.cnn;
    let theta0 = init_params(&model, tcfg.seed)?;
    let initial = super::initial_evals(&model, &theta0, &train_set, &test_set)?;
    let out = train::train(&model, &theta0, &train_set, &test_set, tcfg)?;

    ctx.run
        .write_curves("curves.csv", "cnn", Some(initial), &out.records)?;
    for snap in &out.snapshots {
        ctx.run.save_checkpoint(
            &format!("cnn_tw{}.efcn", snap.t_w),
            &Checkpoint::from_snapshot(&model, tcfg.seed, snap),
        )?;
    }
    ctx.run
        .save_checkpoint("cnn_final.efcn", &final_checkpoint(&model, tcfg, &out))?;
    let summary = RunSummary::new("cnn", initial, &out.records);
    ctx.run.write_json("summary.json", &summary)?;
    say!(
        "cnn: {} epochs, test accuracy {:.4} -> {:.4} ({})",
        tcfg.epochs,
        initial.1,
        summary.final_test_accuracy,
        ctx.run.path().display()
    );
    Ok(())
}

pub fn train_fcn(ctx: &Ctx) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let cnn = ctx.cnn_spec(&train_set)?;
    let model = efcn_core::nn::build_fcn_from(&cnn)?;
    let tcfg = &ctx.cfg.train.relax;
    let theta0 = init_params(&model, tcfg.seed)?;
    let initial = super::initial_evals(&model, &theta0, &train_set, &test_set)?;
    let out = train::train(&model, &theta0, &train_set, &test_set, tcfg)?;

    ctx.run
        .write_curves("curves.csv", "fcn", Some(initial), &out.records)?;
    ctx.run.save_checkpoint(
        "fcn_final.efcn",
        &plain_checkpoint(&model, &out.theta, tcfg, &out.records),
    )?;
    let summary = RunSummary::new("fcn", initial, &out.records);
    ctx.run.write_json("summary.json", &summary)?;
    say!(
        "fcn: {} epochs, test accuracy {:.4} -> {:.4} ({})",
        tcfg.epochs,
        initial.1,
        summary.final_test_accuracy,
        ctx.run.path().display()
    );
    Ok(())
}

/// The last snapshot doubles as the final checkpoint when the schedule ends
/// at the final epoch (it always does for snapshot_count ≥ 2); it carries
/// optimizer and RNG state, so the run can be resumed. Otherwise fall back
/// to a parameters-only checkpoint.
fn final_checkpoint(
    model: &efcn_core::nn::ModelSpec,
    tcfg: &efcn_core::train::TrainConfig,
    out: &TrainOutcome,
) -> Checkpoint {
    match out.snapshots.last() {
        Some(snap) if snap.t_w == tcfg.epochs => Checkpoint::from_snapshot(model, tcfg.seed, snap),
        _ => plain_checkpoint(model, &out.theta, tcfg, &out.records),
    }
}

pub fn relax(ctx: &Ctx, tw: usize, from: Option<&Path>) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let (cnn_spec, snap) = match from {
        Some(dir) => load_snapshot_from_dir(dir, tw)?,
        None => {
            let model = ctx.cnn_spec(&train_set)?;
            let tcfg = &ctx.cfg.train.cnn;
            if tcfg.snapshot_count < 2 {
                return Err(CliError::Config(
                    "relax without --from trains the source model here and needs \
                     train.cnn.snapshot_count >= 2"
                        .into(),
                ));
            }
            let theta0 = init_params(&model, tcfg.seed)?;
            let out = train::train(&model, &theta0, &train_set, &test_set, tcfg)?;
            let schedule: Vec<usize> = out.snapshots.iter().map(|s| s.t_w).collect();
            let snap = out
                .snapshots
                .into_iter()
                .find(|s| s.t_w == tw)
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "no snapshot at t_w = {tw}; the schedule is {schedule:?}"
                    ))
                })?;
            (model, snap)
        }
    };

    // Keep the source snapshot next to the run it seeds.
    ctx.run.save_checkpoint(
        &format!("cnn_tw{tw}.efcn"),
        &Checkpoint::from_snapshot(&cnn_spec, ctx.cfg.train.cnn.seed, &snap),
    )?;

    let map = EmbeddingMap::build(&cnn_spec)?;
    let theta_e = map.apply(&snap.theta)?;
    let fcn_spec = map.fcn_spec().clone();
    let tcfg = &ctx.cfg.train.relax;
    let initial = super::initial_evals(&fcn_spec, &theta_e, &train_set, &test_set)?;
    let out = train::train(&fcn_spec, &theta_e, &train_set, &test_set, tcfg)?;

    let phase = format!("efcn_tw{tw}");
    ctx.run
        .write_curves("curves.csv", &phase, Some(initial), &out.records)?;
    let delta_final = delta(&out.theta, map.local_mask())?;
    ctx.run.save_checkpoint(
        &format!("efcn_tw{tw}_final.efcn"),
        &embedded_checkpoint(
            &fcn_spec,
            &cnn_spec,
            &out.theta,
            tw,
            tcfg.seed,
            tcfg.epochs,
            out.records.last().map(|r| r.train_loss),
            out.records.iter().rev().find_map(|r| r.test_accuracy),
        ),
    )?;
    let summary = RunSummary::new(&phase, initial, &out.records);
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "run": summary,
            "t_w": tw,
            "delta_final": delta_final,
        }),
    )?;
    say!(
        "relax t_w={tw}: test accuracy {:.4} -> {:.4}, delta {:.4} ({})",
        initial.1,
        summary.final_test_accuracy,
        delta_final,
        ctx.run.path().display()
    );
    Ok(())
}

/// Find `cnn_tw{tw}.efcn` inside a previous run directory, or list what is
/// actually there.
fn load_snapshot_from_dir(
    dir: &Path,
    tw: usize,
) -> Result<(efcn_core::nn::ModelSpec, Snapshot)> {
    let path = dir.join(format!("cnn_tw{tw}.efcn"));
    if !path.exists() {
        let mut available: Vec<usize> = std::fs::read_dir(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
            .filter_map(|entry| {
                let name = entry.ok()?.file_name().into_string().ok()?;
                name.strip_prefix("cnn_tw")?
                    .strip_suffix(".efcn")?
                    .parse()
                    .ok()
            })
            .collect();
        available.sort_unstable();
        return Err(CliError::Usage(format!(
            "{} has no snapshot at t_w = {tw}; available: {available:?}",
            dir.display()
        )));
    }
    let ckpt = load_checkpoint(&path)?;
    let snap = ckpt
        .to_snapshot()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((ckpt.meta.model, snap))
}

pub fn protocol(ctx: &Ctx) -> Result<()> {
    let (train_set, test_set) = ctx.datasets()?;
    let cnn_spec = ctx.cnn_spec(&train_set)?;
    let rcfg = RelaxConfig {
        cnn: ctx.cfg.train.cnn.clone(),
        relax: ctx.cfg.train.relax.clone(),
    };
    let report = relax_protocol(&cnn_spec, &train_set, &test_set, &rcfg)?;
    let map = EmbeddingMap::build(&cnn_spec)?;
    let fcn_spec = map.fcn_spec().clone();

    // Curves: one file per phase so each stays a single monotone epoch axis.
    ctx.run.write_curves(
        "curves_cnn.csv",
        "cnn",
        Some((report.cnn.initial_train_loss, report.cnn.initial_test_accuracy)),
        &report.cnn.records,
    )?;
    ctx.run.write_curves(
        "curves_fcn.csv",
        "fcn",
        Some((report.fcn.initial_train_loss, report.fcn.initial_test_accuracy)),
        &report.fcn.records,
    )?;
    for (t_w, run) in &report.efcn {
        ctx.run.write_curves(
            &format!("curves_efcn_tw{t_w}.csv"),
            &format!("efcn_tw{t_w}"),
            Some((run.initial_train_loss, run.initial_test_accuracy)),
            &run.records,
        )?;
    }

    // Checkpoints for every stage.
    for snap in &report.snapshots {
        ctx.run.save_checkpoint(
            &format!("cnn_tw{}.efcn", snap.t_w),
            &Checkpoint::from_snapshot(&cnn_spec, rcfg.cnn.seed, snap),
        )?;
    }
    if let Some(last) = report.snapshots.last() {
        ctx.run.save_checkpoint(
            "cnn_final.efcn",
            &Checkpoint::from_snapshot(&cnn_spec, rcfg.cnn.seed, last),
        )?;
    }
    ctx.run.save_checkpoint(
        "fcn_final.efcn",
        &plain_checkpoint(&fcn_spec, &report.fcn.theta, &rcfg.relax, &report.fcn.records),
    )?;
    for ((t_w, run), snap) in report.efcn.iter().zip(&report.snapshots) {
        debug_assert_eq!(*t_w, snap.t_w);
        ctx.run.save_checkpoint(
            &format!("efcn_tw{t_w}_final.efcn"),
            &embedded_checkpoint(
                &fcn_spec,
                &cnn_spec,
                &run.theta,
                *t_w,
                rcfg.relax.seed,
                rcfg.relax.epochs,
                run.records.last().map(|r| r.train_loss),
                run.records.iter().rev().find_map(|r| r.test_accuracy),
            ),
        )?;
    }

    // Probes: each embedding before and after its dense run. The top
    // curvature is costly on embedded models, so it is opt-in
    // (probe.with_hessian).
    let probe_batch = probes::probe_set(
        &train_set,
        ctx.cfg.probe.probe_set_size,
        ctx.cfg.probe.probe_seed,
    )?;
    let mut rows = Vec::new();
    for ((t_w, run), snap) in report.efcn.iter().zip(&report.snapshots) {
        let theta_e = map.apply(&snap.theta)?;
        rows.push(probe_row(
            ctx,
            &fcn_spec,
            &theta_e,
            &map,
            &probe_batch,
            &test_set,
            *t_w,
            ProbePhase::AtEmbedding,
            run.initial_test_accuracy,
        )?);
        rows.push(probe_row(
            ctx,
            &fcn_spec,
            &run.theta,
            &map,
            &probe_batch,
            &test_set,
            *t_w,
            ProbePhase::AfterTraining,
            run.final_test_accuracy(),
        )?);
    }
    ctx.run.write_probes("probes.csv", &rows)?;

    let deltas: Vec<serde_json::Value> = report
        .efcn
        .iter()
        .map(|(t_w, run)| {
            Ok(serde_json::json!({
                "t_w": t_w,
                "delta_final": delta(&run.theta, map.local_mask())?,
                "test_accuracy": run.final_test_accuracy(),
            }))
        })
        .collect::<Result<_>>()?;
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "schedule": report.schedule,
            "cnn": RunSummary::new("cnn", (report.cnn.initial_train_loss, report.cnn.initial_test_accuracy), &report.cnn.records),
            "fcn": RunSummary::new("fcn", (report.fcn.initial_train_loss, report.fcn.initial_test_accuracy), &report.fcn.records),
            "efcn": deltas,
        }),
    )?;
    say!(
        "protocol: schedule {:?}, cnn {:.4}, fcn {:.4} ({})",
        report.schedule,
        report.cnn.final_test_accuracy(),
        report.fcn.final_test_accuracy(),
        ctx.run.path().display()
    );
    Ok(())
}

/// One probes.csv row; the curvature column stays empty unless enabled.
#[allow(clippy::too_many_arguments)]
fn probe_row(
    ctx: &Ctx,
    fcn_spec: &efcn_core::nn::ModelSpec,
    theta: &efcn_core::ParamVector,
    map: &EmbeddingMap,
    probe_batch: &efcn_core::data::Batch,
    test_set: &efcn_core::data::Dataset,
    t_w: usize,
    phase: ProbePhase,
    test_acc: f64,
) -> Result<ProbeRow> {
    let grad_norm = probes::grad_norm(fcn_spec, theta, probe_batch)?;
    let lambda_max = if ctx.cfg.probe.with_hessian {
        let (lambda, _) = probes::lambda_max(fcn_spec, theta, probe_batch, &ctx.cfg.probe.power)?;
        Some(lambda)
    } else {
        None
    };
    Ok(ProbeRow {
        t_w,
        phase,
        grad_norm: Some(grad_norm),
        lambda_max,
        delta: Some(delta(theta, map.local_mask())?),
        test_acc: Some(test_acc),
        test_acc_local: Some(probes::masked_accuracy(
            fcn_spec, theta, map, Keep::Local, test_set,
        )?),
        test_acc_offlocal: Some(probes::masked_accuracy(
            fcn_spec,
            theta,
            map,
            Keep::OffLocal,
            test_set,
        )?),
    })
}
