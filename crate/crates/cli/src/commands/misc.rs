//! `synth` (materialize the synthetic dataset) and `verify` (built-in
//! self-checks).

use efcn_core::data::synthetic::{class_patterns, gen_synthetic};
use efcn_core::data::Dataset;

use super::Ctx;
use crate::errors::{CliError, Result};

pub fn synth(ctx: &Ctx) -> Result<()> {
    let scfg = &ctx.cfg.data.synthetic;
    let patterns = class_patterns(scfg, ctx.cfg.seed)?;
    let (train_set, test_set) = gen_synthetic(scfg, ctx.cfg.seed)?;

    ctx.run.write_json(
        "patterns.json",
        &serde_json::json!({
            "classes": scfg.classes,
            "pattern_side": scfg.pattern,
            "patterns": patterns,
        }),
    )?;

    let mut writer = csv::Writer::from_path(ctx.run.path().join("labels.csv"))?;
    writer.write_record(["split", "index", "label"])?;
    for (split, set) in [("train", &train_set), ("test", &test_set)] {
        for (index, label) in set.labels.iter().enumerate() {
            writer.write_record([split, &index.to_string(), &label.to_string()])?;
        }
    }
    writer.flush().map_err(std::io::Error::from)?;

    let histogram = |set: &Dataset| {
        let mut counts = vec![0usize; set.classes];
        for &l in &set.labels {
            counts[l as usize] += 1;
        }
        counts
    };
    ctx.run.write_json(
        "summary.json",
        &serde_json::json!({
            "config": scfg,
            "seed": ctx.cfg.seed,
            "train_n": train_set.len(),
            "test_n": test_set.len(),
            "train_class_counts": histogram(&train_set),
            "test_class_counts": histogram(&test_set),
        }),
    )?;
    say!(
        "synth: {} train / {} test, {} classes ({})",
        train_set.len(),
        test_set.len(),
        scfg.classes,
        ctx.run.path().display()
    );
    Ok(())
}

pub fn verify(ctx: &Ctx) -> Result<()> {
    let report = efcn_core::verify::run(ctx.cfg.seed);
    for check in &report.checks {
        let mark = if check.passed { "ok  " } else { "FAIL" };
        say!("{mark} {} — {}", check.name, check.detail);
    }
    let checks: Vec<serde_json::Value> = report
        .checks
        .iter()
        .map(|c| {
            serde_json::json!({
                "name": c.name,
                "passed": c.passed,
                "detail": c.detail,
            })
        })
        .collect();
    ctx.run.write_json(
        "verify.json",
        &serde_json::json!({
            "seed": ctx.cfg.seed,
            "all_passed": report.all_passed(),
            "checks": checks,
        }),
    )?;
    if report.all_passed() {
        say!("verify: all {} checks passed", report.checks.len());
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        Err(CliError::Runtime(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}
