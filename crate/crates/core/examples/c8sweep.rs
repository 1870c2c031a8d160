use std::time::Instant;

use efcn_core::data::synthetic::{gen_synthetic, SyntheticConfig};
use efcn_core::embed::{delta, EmbeddingMap};
use efcn_core::nn::build_vanilla_cnn;
use efcn_core::embed::Keep;
use efcn_core::probes::masked_accuracy;
use efcn_core::train::{relax_protocol, RelaxConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pick: Option<&str> = args.get(1).map(|s| s.as_str());
    let configs = [
        ("n10k-q7-s30", SyntheticConfig { classes: 10, canvas: 16, pattern: 7, train_n: 10_000, test_n: 2_000, noise: 0.3 }),
        ("n10k-q8-s15", SyntheticConfig { classes: 10, canvas: 16, pattern: 8, train_n: 10_000, test_n: 2_000, noise: 0.15 }),
        ("n10k-q10-s20", SyntheticConfig { classes: 10, canvas: 16, pattern: 10, train_n: 10_000, test_n: 2_000, noise: 0.2 }),
    ];
    for (name, synth) in &configs {
        if pick.map_or(false, |p| p != *name) {
            continue;
        }
        check(name, synth);
    }
}

fn check(name: &str, synth: &SyntheticConfig) {
    let t0 = Instant::now();
    let cnn = build_vanilla_cnn(8, (1, 16, 16), synth.classes).unwrap();
    let map = EmbeddingMap::build(&cnn).unwrap();
    let chance = 1.0 / synth.classes as f64;

    let (mut ok_gap, mut ok_no_overfit, mut ok_tw0, mut ok_trend, mut ok_chance) =
        (true, true, true, true, true);

    for seed in 0..3u64 {
        let (train_set, test_set) = gen_synthetic(synth, seed).unwrap();
        let cfg = RelaxConfig {
            cnn: TrainConfig { lr: 0.1, epochs: 30, snapshot_count: 6, seed, eval_every: 5, ..TrainConfig::default() },
            relax: TrainConfig { lr: 0.01, epochs: 20, snapshot_count: 0, seed, eval_every: 5, ..TrainConfig::default() },
        };
        let report = relax_protocol(&cnn, &train_set, &test_set, &cfg).unwrap();

        let cnn_acc = report.cnn.final_test_accuracy();
        let fcn_acc = report.fcn.final_test_accuracy();
        ok_gap &= cnn_acc >= fcn_acc + 0.05;

        for (_t_w, run) in &report.efcn {
            ok_no_overfit &= run.final_test_accuracy() >= run.initial_test_accuracy - 0.01;
        }

        let tw0_acc = report.efcn.iter().find(|(t, _)| *t == 0).map(|(_, r)| r.final_test_accuracy()).unwrap();
        ok_tw0 &= tw0_acc > fcn_acc;

        let deltas: Vec<f64> = report.efcn.iter().map(|(_, r)| delta(&r.theta, map.local_mask()).unwrap()).collect();
        let inversions = deltas.windows(2).filter(|w| w[1] > w[0]).count();
        ok_trend &= inversions <= 1;

        for snap in &report.snapshots {
            let theta_e = map.apply(&snap.theta).unwrap();
            let acc = masked_accuracy(map.fcn_spec(), &theta_e, &map, Keep::OffLocal, &test_set).unwrap();
            ok_chance &= acc == chance;
        }

        let effs: Vec<String> = report
            .efcn
            .iter()
            .map(|(t, r)| format!("tw{t}:{:.3}->{:.3}", r.initial_test_accuracy, r.final_test_accuracy()))
            .collect();
        println!(
            "[{name}] seed {seed}: cnn {cnn_acc:.3} fcn {fcn_acc:.3} | {} | δ [{}] inv={inversions}",
            effs.join(" "),
            deltas.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(" ")
        );
    }
    println!(
        "[{name}] verdict: gap={ok_gap} no_overfit={ok_no_overfit} tw0={ok_tw0} trend={ok_trend} chance={ok_chance} ({:.0} s)",
        t0.elapsed().as_secs_f64()
    );
}
