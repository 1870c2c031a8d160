//! Landscape and representation measurements on a fixed probe set: gradient
//! norm, top Hessian eigenvalue by power iteration, deviation ratio δ,
//! masked-accuracy evaluation, and dense-row filter heatmaps.

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::embed::{self, EmbeddingMap, Keep};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream, DetRng};
use crate::tensor::{hvp_of, ModelObjective, Objective, Tensor};
use crate::train;

/// Default probe-set size: a fixed seeded subsample of the training set
/// keeps gradient and Hessian probes affordable at any scale.
pub const DEFAULT_PROBE_SET: usize = 2048;

/// Additive floor under |w| before taking the logarithm, so exact zeros map
/// to the distinguishable sentinel level ln(1e−12) ≈ −27.63.
pub const HEATMAP_FLOOR: f64 = 1e-12;

/// Power-iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerIterConfig {
    pub max_iters: usize,
    /// Convergence tolerance: the Rayleigh quotient must settle to within
    /// tol·max(1, |λ|) between iterations and the residual ‖Hv − λv‖ must
    /// drop to 10·tol before the iteration stops early.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        PowerIterConfig {
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// What the power iteration actually did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIterMeta {
    pub iterations: usize,
    pub converged: bool,
    /// ‖Hv − λv‖₂ at the returned iterate (v is unit-norm).
    pub residual: f64,
}

/// When in a run's life a probe was taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePhase {
    AtEmbedding,
    AfterTraining,
}

impl std::fmt::Display for ProbePhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbePhase::AtEmbedding => write!(f, "at_embedding"),
            ProbePhase::AfterTraining => write!(f, "after_training"),
        }
    }
}

/// One full measurement of a parameter vector. Deviation and masked
/// accuracies exist only for models with an embedding map (eFCN/FCN).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub t_w: usize,
    pub phase: ProbePhase,
    pub grad_norm: f64,
    pub lambda_max: f64,
    pub lambda_meta: PowerIterMeta,
    pub delta: Option<f64>,
    pub test_accuracy: f64,
    pub test_accuracy_local_only: Option<f64>,
    pub test_accuracy_offlocal_only: Option<f64>,
}

/// Fixed, seeded probe subsample: the whole training set when it is small
/// enough, otherwise `size` distinct examples in ascending index order.
pub fn probe_set(train_set: &Dataset, size: usize, seed: u64) -> Result<Batch> {
    if size == 0 {
        return Err(Error::InvalidArgument("probe set size must be ≥ 1".into()));
    }
    let n = train_set.len();
    if n <= size {
        return Ok(train_set.full_batch());
    }
    let mut rng = DetRng::new(seed, stream::PROBE_SET, 0);
    let mut idx = rng.sample_indices(n, size);
    idx.sort_unstable();
    train_set.gather(&idx)
}

/// ‖∇L‖₂ over the probe set, accumulated in f64.
pub fn grad_norm(model: &ModelSpec, theta: &ParamVector, probe: &Batch) -> Result<f64> {
    let (_, g) = nn::grad(model, theta, probe)?;
    Ok(g.norm_l2())
}

/// Power iteration on any objective's Hessian (via finite-difference
/// Hessian-vector products). Returns the signed dominant eigenvalue as a
/// Rayleigh quotient plus convergence metadata.
pub fn lambda_max_of<O: Objective>(
    obj: &O,
    theta: &ParamVector,
    cfg: &PowerIterConfig,
) -> Result<(f64, PowerIterMeta)> {
    if cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "power iteration tolerance must be positive, got {}",
            cfg.tol
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument(
            "power iteration needs max_iters ≥ 1".into(),
        ));
    }
    let mut rng = DetRng::new(cfg.seed, stream::POWER_ITER, 0);
    let mut v = ParamVector::zeros(std::sync::Arc::clone(theta.layout()));
    for x in v.values_mut() {
        *x = rng.standard_normal_f32();
    }
    let n0 = v.norm_l2();
    if n0 == 0.0 {
        return Err(Error::ZeroNorm {
            context: "power iteration start vector".into(),
        });
    }
    v.scale((1.0 / n0) as f32);

    let mut lambda = f64::NAN;
    let mut meta = PowerIterMeta {
        iterations: 0,
        converged: false,
        residual: f64::NAN,
    };
    for it in 1..=cfg.max_iters {
        let w = hvp_of(obj, theta, &v, crate::tensor::DEFAULT_HVP_EPS0)?;
        let prev = lambda;
        // v is unit-norm, so vᵀw is the Rayleigh quotient.
        lambda = v.dot(&w);
        let mut r = w.clone();
        r.add_scaled(-(lambda as f32), &v);
        meta.residual = r.norm_l2();
        meta.iterations = it;
        let settled = prev.is_finite()
            && (lambda - prev).abs() <= cfg.tol * lambda.abs().max(1.0)
            && meta.residual <= 10.0 * cfg.tol;
        if settled {
            meta.converged = true;
            return Ok((lambda, meta));
        }
        let wn = w.norm_l2();
        if wn == 0.0 {
            return Err(Error::ZeroNorm {
                context: "power iteration: H·v vanished".into(),
            });
        }
        v = w;
        v.scale((1.0 / wn) as f32);
    }
    Ok((lambda, meta))
}

/// Top Hessian eigenvalue of the model loss over the probe set.
pub fn lambda_max(
    model: &ModelSpec,
    theta: &ParamVector,
    probe: &Batch,
    cfg: &PowerIterConfig,
) -> Result<(f64, PowerIterMeta)> {
    lambda_max_of(&ModelObjective { model, batch: probe }, theta, cfg)
}

/// Accuracy after zeroing one side of the local / off-local split.
pub fn masked_accuracy(
    model: &ModelSpec,
    theta: &ParamVector,
    map: &EmbeddingMap,
    keep: Keep,
    test_set: &Dataset,
) -> Result<f64> {
    let masked = embed::mask_apply(theta, map.local_mask(), keep)?;
    let (_, acc) = train::evaluate(model, &masked, test_set, train::EVAL_BATCH)?;
    Ok(acc)
}

/// Accuracy and mean loss over a dataset, dropout inactive.
pub fn evaluate(model: &ModelSpec, theta: &ParamVector, data: &Dataset) -> Result<(f64, f64)> {
    let (loss, acc) = train::evaluate(model, theta, data, train::EVAL_BATCH)?;
    Ok((acc, loss))
}

/// The dense row for output position (out_channel, i_o, j_o) of an embedded
/// layer, unflattened channel-major into (c_in, h, w). Raw weights, no log.
pub fn dense_row(
    theta_efcn: &ParamVector,
    map: &EmbeddingMap,
    layer: usize,
    out_channel: usize,
    out_position: (usize, usize),
) -> Result<Tensor> {
    let Some(g) = map.embedded_geom(layer) else {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not an embedded conv layer"
        )));
    };
    let (io, jo) = out_position;
    if out_channel >= g.c_out || io >= g.out_h || jo >= g.out_w {
        return Err(Error::InvalidArgument(format!(
            "output position ({out_channel}, {io}, {jo}) outside ({}, {}, {})",
            g.c_out, g.out_h, g.out_w
        )));
    }
    if theta_efcn.len() != map.fcn_layout().total() {
        return Err(Error::shape(
            "dense_row: parameters do not match the embedded spec",
            format!("{}", map.fcn_layout().total()),
            format!("{}", theta_efcn.len()),
        ));
    }
    let seg = map
        .fcn_layout()
        .segment(layer, crate::params::ParamKind::Weight)
        .expect("embedded layer has a weight segment");
    let cols = g.cols();
    let row = (out_channel * g.out_h + io) * g.out_w + jo;
    let values = theta_efcn.slice(seg)[row * cols..(row + 1) * cols].to_vec();
    Tensor::new(vec![g.c_in, g.h, g.w], values)
}

/// ln(|w| + floor) over one dense row, shaped (c_in, h, w). At embedding,
/// entries inside the receptive field equal ln|filter weight| and everything
/// else sits at the ln(floor) sentinel.
pub fn filter_heatmap(
    theta_efcn: &ParamVector,
    map: &EmbeddingMap,
    layer: usize,
    out_channel: usize,
    out_position: (usize, usize),
) -> Result<Tensor> {
    let mut row = dense_row(theta_efcn, map, layer, out_channel, out_position)?;
    for v in row.data_mut() {
        *v = ((*v).abs() as f64 + HEATMAP_FLOOR).ln() as f32;
    }
    Ok(row)
}

/// Probe configuration: subsample size plus power-iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub probe_set_size: usize,
    pub probe_seed: u64,
    pub power: PowerIterConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            probe_set_size: DEFAULT_PROBE_SET,
            probe_seed: 0,
            power: PowerIterConfig::default(),
        }
    }
}

/// One full probe of a parameter vector: landscape quantities on the probe
/// set, accuracy on the test set, and — when an embedding map applies —
/// deviation and masked accuracies.
#[allow(clippy::too_many_arguments)]
pub fn probe(
    model: &ModelSpec,
    theta: &ParamVector,
    train_set: &Dataset,
    test_set: &Dataset,
    map: Option<&EmbeddingMap>,
    t_w: usize,
    phase: ProbePhase,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let probe_batch = probe_set(train_set, cfg.probe_set_size, cfg.probe_seed)?;
    let grad_norm = grad_norm(model, theta, &probe_batch)?;
    let (lambda, lambda_meta) = lambda_max(model, theta, &probe_batch, &cfg.power)?;
    let (test_accuracy, _) = evaluate(model, theta, test_set)?;
    let (delta, local_acc, off_acc) = match map {
        Some(map) => (
            Some(embed::delta(theta, map.local_mask())?),
            Some(masked_accuracy(model, theta, map, Keep::Local, test_set)?),
            Some(masked_accuracy(model, theta, map, Keep::OffLocal, test_set)?),
        ),
        None => (None, None, None),
    };
    Ok(ProbeReport {
        t_w,
        phase,
        grad_norm,
        lambda_max: lambda,
        lambda_meta,
        delta,
        test_accuracy,
        test_accuracy_local_only: local_acc,
        test_accuracy_offlocal_only: off_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{gen_synthetic, SyntheticConfig};
    use crate::data::Split;
    use crate::nn::{init_params, ConvSpec, LayerSpec};
    use crate::params::ParamLayout;
    use crate::train::{adam_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_EPS};
    use nalgebra::{DMatrix, SymmetricEigen};
    use std::sync::Arc;

    /// ½ Σ dᵢθᵢ², optionally scaled: Hessian = scale·diag(d).
    struct Quadratic {
        d: Vec<f64>,
        scale: f64,
    }

    impl Objective for Quadratic {
        fn value(&self, theta: &ParamVector) -> Result<f64> {
            Ok(self.scale
                * 0.5
                * theta
                    .values()
                    .iter()
                    .zip(&self.d)
                    .map(|(t, d)| d * (*t as f64) * (*t as f64))
                    .sum::<f64>())
        }
        fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
            let vals = theta
                .values()
                .iter()
                .zip(&self.d)
                .map(|(t, d)| (self.scale * d * (*t as f64)) as f32)
                .collect();
            ParamVector::from_values(Arc::clone(theta.layout()), vals)
        }
    }

    fn flat(values: Vec<f32>) -> ParamVector {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        ParamVector::from_values(layout, values).unwrap()
    }

    #[test]
    fn norm_semantics_are_euclidean() {
        // grad_norm is ‖·‖₂ with f64 accumulation; (3,4) → 5 exactly, and
        // scaling the loss by c scales the norm by |c| (powers of two are
        // exact in f32).
        assert_eq!(flat(vec![3.0, 4.0]).norm_l2(), 5.0);
        let g = flat(vec![0.3, -1.7, 2.2]);
        let mut scaled = g.clone();
        scaled.scale(-4.0);
        assert_eq!(scaled.norm_l2(), 4.0 * g.norm_l2());
    }

    #[test]
    fn gradient_vanishes_at_an_interpolation_minimum() {
        // Over-parametrized dense net fit to 2 points with Adam: normalized
        // steps keep pushing the margin even as the gradient collapses, so
        // the loss reaches < 1e−10 and the gradient dies with it. β₂ is
        // shortened to 0.99 — with the default 0.999 the second-moment
        // estimate remembers ~1000 steps of stale (much larger) gradients
        // and the effective step shrinks by e^{-1000c}, stalling the drive
        // to the minimum.
        let model = ModelSpec {
            input: (1, 2, 2),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 4,
                    output: 16,
                    output_shape: None,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 16,
                    output: 2,
                    output_shape: None,
                },
            ],
            classes: 2,
        };
        let mut theta = init_params(&model, 13).unwrap();
        let mut rng = DetRng::new(13, stream::PROBE_SET, 3);
        let mut x = vec![0.0f32; 2 * 4];
        for v in x.iter_mut() {
            *v = rng.standard_normal_f32();
        }
        let images = Tensor::new(vec![2, 1, 2, 2], x).unwrap();
        let batch = Batch::new(images, vec![0, 1]).unwrap();

        let mut state = OptimizerState::new(OptimizerKind::Adam, 0.0, theta.len());
        let mut final_loss = f64::INFINITY;
        for _ in 0..12000 {
            let (loss, grad) = nn::grad(&model, &theta, &batch).unwrap();
            final_loss = loss;
            if loss < 1e-12 {
                break;
            }
            adam_step(&mut theta, &grad, &mut state, 0.05, (ADAM_BETA1, 0.99), ADAM_EPS)
                .unwrap();
        }
        assert!(final_loss < 1e-10, "loss stalled at {final_loss}");
        let gn = grad_norm(&model, &theta, &batch).unwrap();
        assert!(gn <= 1e-4, "gradient norm {gn}");
    }

    #[test]
    fn power_iteration_finds_known_spectrum() {
        let obj = Quadratic {
            d: vec![3.0, 1.0, -0.5],
            scale: 1.0,
        };
        let theta = flat(vec![0.0, 0.0, 0.0]);
        let cfg = PowerIterConfig {
            max_iters: 200,
            tol: 1e-8,
            seed: 4,
        };
        let (lambda, meta) = lambda_max_of(&obj, &theta, &cfg).unwrap();
        assert!((lambda - 3.0).abs() < 1e-6, "lambda {lambda}");
        assert!(meta.converged, "meta {meta:?}");
        assert!(meta.residual <= 10.0 * cfg.tol, "residual {}", meta.residual);
    }

    #[test]
    fn power_iteration_scales_linearly_with_the_loss() {
        let theta = flat(vec![0.0, 0.0, 0.0]);
        let cfg = PowerIterConfig {
            max_iters: 200,
            tol: 1e-8,
            seed: 4,
        };
        let base = lambda_max_of(
            &Quadratic {
                d: vec![3.0, 1.0, -0.5],
                scale: 1.0,
            },
            &theta,
            &cfg,
        )
        .unwrap()
        .0;
        let scaled = lambda_max_of(
            &Quadratic {
                d: vec![3.0, 1.0, -0.5],
                scale: 2.5,
            },
            &theta,
            &cfg,
        )
        .unwrap()
        .0;
        assert!(
            (scaled - 2.5 * base).abs() <= 1e-3 * (2.5 * base).abs(),
            "base {base}, scaled {scaled}"
        );
    }

    #[test]
    fn power_iteration_matches_dense_hessian_oracle() {
        // Random net with 77 parameters; dense central-difference Hessian of
        // the same probe loss, symmetrized and eigensolved, as the oracle.
        // No activation: conv∘dense is bilinear in θ, so the loss is smooth
        // (finite differences across ReLU kinks would corrupt the oracle)
        // yet genuinely non-convex, with cross-layer curvature.
        let model = ModelSpec {
            input: (1, 5, 5),
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    c_in: 1,
                    c_out: 2,
                    k: 3,
                    s: 1,
                    p: 0,
                }),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 18,
                    output: 3,
                    output_shape: None,
                },
            ],
            classes: 3,
        };
        let theta = init_params(&model, 17).unwrap();
        let n = theta.len();
        assert!(n <= 200, "oracle needs a small net, got {n} params");

        let cfg = SyntheticConfig {
            classes: 3,
            canvas: 5,
            pattern: 3,
            train_n: 24,
            test_n: 6,
            noise: 0.3,
        };
        let (train_set, _) = gen_synthetic(&cfg, 31).unwrap();
        let probe = train_set.full_batch();

        let eps = 5e-3f32;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let orig = theta.values()[j];
            let mut plus = theta.clone();
            plus.values_mut()[j] = orig + eps;
            let mut minus = theta.clone();
            minus.values_mut()[j] = orig - eps;
            let (_, gp) = nn::grad(&model, &plus, &probe).unwrap();
            let (_, gm) = nn::grad(&model, &minus, &probe).unwrap();
            let span = (plus.values()[j] - minus.values()[j]) as f64;
            for i in 0..n {
                h[(i, j)] = (gp.values()[i] as f64 - gm.values()[i] as f64) / span;
            }
        }
        let sym = (h.clone() + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let oracle = eig
            .eigenvalues
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap();

        let (lambda, _) = lambda_max(
            &model,
            &theta,
            &probe,
            &PowerIterConfig {
                max_iters: 300,
                tol: 1e-7,
                seed: 6,
            },
        )
        .unwrap();
        let rel = (lambda - oracle).abs() / oracle.abs();
        assert!(rel <= 1e-2, "power {lambda} vs oracle {oracle} (rel {rel})");
    }

    #[test]
    fn probe_set_is_fixed_and_bounded() {
        let cfg = SyntheticConfig {
            classes: 4,
            canvas: 8,
            pattern: 3,
            train_n: 50,
            test_n: 10,
            noise: 0.3,
        };
        let (train_set, _) = gen_synthetic(&cfg, 5).unwrap();
        // Larger than the set → the full set in order.
        let full = probe_set(&train_set, 64, 1).unwrap();
        assert_eq!(full.len(), 50);
        // Smaller → exactly `size` examples, deterministic across calls.
        let a = probe_set(&train_set, 16, 1).unwrap();
        let b = probe_set(&train_set, 16, 1).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images.data(), b.images.data());
        let c = probe_set(&train_set, 16, 2).unwrap();
        assert!(
            a.labels != c.labels || a.images.data() != c.images.data(),
            "different seeds should draw different probe sets"
        );
    }

    fn identity_head_model() -> ModelSpec {
        ModelSpec {
            input: (1, 1, 4),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 4,
                    output: 4,
                    output_shape: None,
                },
            ],
            classes: 4,
        }
    }

    /// One-hot images so logits = W·x pick out columns directly.
    fn one_hot_dataset(labels: &[u32]) -> Dataset {
        let n = labels.len();
        let mut x = vec![0.0f32; n * 4];
        for (i, &l) in labels.iter().enumerate() {
            x[i * 4 + l as usize] = 10.0;
        }
        Dataset::new(
            Tensor::new(vec![n, 1, 1, 4], x).unwrap(),
            labels.to_vec(),
            4,
            Split::Test,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_extremes_and_argmax_invariance() {
        let model = identity_head_model();
        let layout = Arc::new(ParamLayout::of(&model));
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let data = one_hot_dataset(&labels);

        // W = I → logits reproduce the one-hot input → accuracy 1.
        let mut perfect = ParamVector::zeros(Arc::clone(&layout));
        {
            let seg = layout.segment(1, crate::params::ParamKind::Weight).unwrap().clone();
            let w = perfect.slice_mut(&seg);
            for i in 0..4 {
                w[i * 4 + i] = 1.0;
            }
        }
        let (acc, loss) = evaluate(&model, &perfect, &data).unwrap();
        assert_eq!(acc, 1.0);
        assert!(loss > 0.0);

        // W = 0, constant biases → ties, argmax picks class 0 → accuracy
        // equals class 0's share of the balanced set.
        let mut constant = ParamVector::zeros(Arc::clone(&layout));
        {
            let seg = layout.segment(1, crate::params::ParamKind::Bias).unwrap().clone();
            constant.slice_mut(&seg).fill(0.7);
        }
        let (acc, _) = evaluate(&model, &constant, &data).unwrap();
        assert_eq!(acc, 0.25);

        // Argmax is invariant under strictly increasing per-sample
        // transforms of the logits.
        let logits = Tensor::new(vec![2, 3], vec![0.1, -0.4, 2.0, 1.0, 0.9, 0.89]).unwrap();
        let mono = Tensor::new(
            vec![2, 3],
            logits.data().iter().map(|v| 3.0 * v + 1.0).collect(),
        )
        .unwrap();
        assert_eq!(nn::predictions(&logits), nn::predictions(&mono));
    }

    fn embedded_task() -> (ModelSpec, Dataset, Dataset) {
        let cfg = SyntheticConfig {
            classes: 4,
            canvas: 8,
            pattern: 3,
            train_n: 80,
            test_n: 40,
            noise: 0.3,
        };
        let (train_set, test_set) = gen_synthetic(&cfg, 19).unwrap();
        let model = ModelSpec {
            input: (1, 8, 8),
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    c_in: 1,
                    c_out: 4,
                    k: 3,
                    s: 1,
                    p: 1,
                }),
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 64,
                    output: 4,
                    output_shape: None,
                },
            ],
            classes: 4,
        };
        (model, train_set, test_set)
    }

    #[test]
    fn masked_accuracy_at_embedding() {
        let (cnn, train_set, test_set) = embedded_task();
        let _ = &train_set;
        let theta = init_params(&cnn, 23).unwrap();
        let (fcn, theta_e, map) = embed::embed(&cnn, &theta).unwrap();

        // keep=local: off-local entries are zero anyway → the source model's
        // accuracy, exactly.
        let (cnn_acc, _) = evaluate(&cnn, &theta, &test_set).unwrap();
        let local = masked_accuracy(&fcn, &theta_e, &map, Keep::Local, &test_set).unwrap();
        assert_eq!(local, cnn_acc);

        // keep=off_local: all weight matrices vanish, only biases act, so
        // logits are constant across inputs → most-frequent-class rate,
        // which is exactly 1/C on the balanced synthetic test split.
        let off = masked_accuracy(&fcn, &theta_e, &map, Keep::OffLocal, &test_set).unwrap();
        assert_eq!(off, 0.25);

        let masked = embed::mask_apply(&theta_e, map.local_mask(), Keep::OffLocal).unwrap();
        let logits = nn::forward(&fcn, &masked, &test_set.full_batch().images).unwrap();
        let d = logits.data();
        let c = 4;
        for row in 1..test_set.len() {
            assert_eq!(&d[row * c..(row + 1) * c], &d[..c], "row {row}");
        }
    }

    #[test]
    fn heatmap_shows_filter_inside_receptive_field() {
        let spec = ModelSpec {
            input: (1, 4, 4),
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    c_in: 1,
                    c_out: 1,
                    k: 3,
                    s: 1,
                    p: 0,
                }),
                LayerSpec::Flatten,
            ],
            classes: 4,
        };
        let layout = Arc::new(ParamLayout::of(&spec));
        let mut theta = ParamVector::zeros(Arc::clone(&layout));
        let wseg = layout.segment(0, crate::params::ParamKind::Weight).unwrap().clone();
        let filter: Vec<f32> = vec![0.5, -1.5, 2.0, 3.0, -0.25, 4.0, 0.125, -8.0, 1.0];
        theta.slice_mut(&wseg).copy_from_slice(&filter);
        let (_, theta_e, map) = embed::embed(&spec, &theta).unwrap();

        let (io, jo) = (1, 0);
        let heat = filter_heatmap(&theta_e, &map, 0, 0, (io, jo)).unwrap();
        assert_eq!(heat.shape(), &[1, 4, 4]);
        let sentinel = (HEATMAP_FLOOR).ln() as f32;
        for i in 0..4 {
            for j in 0..4 {
                let v = heat.data()[i * 4 + j];
                let inside =
                    i >= io && i < io + 3 && j >= jo && j < jo + 3;
                if inside {
                    let w = filter[(i - io) * 3 + (j - jo)];
                    let want = ((w.abs() as f64) + HEATMAP_FLOOR).ln() as f32;
                    assert_eq!(v.to_bits(), want.to_bits(), "({i},{j})");
                } else {
                    assert_eq!(v.to_bits(), sentinel.to_bits(), "({i},{j})");
                }
            }
        }

        // Raw row extraction round-trips bitwise.
        let row = dense_row(&theta_e, &map, 0, 0, (io, jo)).unwrap();
        let seg = map.fcn_layout().segment(0, crate::params::ParamKind::Weight).unwrap();
        let flat_row = io * 2 + jo; // out_channel 0 of a 2×2 output grid
        let direct = &theta_e.slice(seg)[flat_row * 16..(flat_row + 1) * 16];
        let bits = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(row.data()), bits(direct));

        // Out-of-range and non-embedded layers are rejected.
        assert!(filter_heatmap(&theta_e, &map, 1, 0, (0, 0)).is_err());
        assert!(filter_heatmap(&theta_e, &map, 0, 1, (0, 0)).is_err());
        assert!(filter_heatmap(&theta_e, &map, 0, 0, (2, 0)).is_err());
    }

    #[test]
    fn full_probe_report_on_an_embedded_model() {
        let (cnn, train_set, test_set) = embedded_task();
        let theta = init_params(&cnn, 29).unwrap();
        let (fcn, theta_e, map) = embed::embed(&cnn, &theta).unwrap();
        let cfg = ProbeConfig {
            probe_set_size: 32,
            probe_seed: 3,
            power: PowerIterConfig {
                max_iters: 40,
                tol: 1e-3,
                seed: 7,
            },
        };
        let report = probe(
            &fcn,
            &theta_e,
            &train_set,
            &test_set,
            Some(&map),
            0,
            ProbePhase::AtEmbedding,
            &cfg,
        )
        .unwrap();
        assert_eq!(report.t_w, 0);
        assert_eq!(report.phase, ProbePhase::AtEmbedding);
        assert!(report.grad_norm > 0.0);
        assert!(report.lambda_max.is_finite());
        assert!(report.lambda_meta.iterations >= 1);
        assert_eq!(report.delta, Some(0.0));
        assert_eq!(report.test_accuracy_local_only, Some(report.test_accuracy));
        assert_eq!(report.test_accuracy_offlocal_only, Some(0.25));

        // Plain models carry no deviation or masked fields.
        let bare = probe(
            &cnn,
            &theta,
            &train_set,
            &test_set,
            None,
            0,
            ProbePhase::AtEmbedding,
            &cfg,
        )
        .unwrap();
        assert_eq!(bare.delta, None);
        assert_eq!(bare.test_accuracy_local_only, None);
        assert_eq!(bare.test_accuracy_offlocal_only, None);
    }
}
