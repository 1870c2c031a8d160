//! Interpolation between two parameter vectors in the same dense coordinate
//! system: straight weight-space paths, elastic-string relaxation of those
//! paths, and output-space (probability-mixing) interpolation, plus loss /
//! accuracy profiles along any of them.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream, DetRng};
use crate::tensor::Tensor;
use crate::train;

/// An ordered list of parameter points x_0..x_{n−1} with evenly spaced
/// interpolation coordinates α_i = i/(n−1). Endpoints are frozen: relaxation
/// never writes to x_0 or x_{n−1}.
#[derive(Clone, Debug)]
pub struct Path {
    points: Vec<ParamVector>,
}

impl Path {
    /// Wrap points as a path. Needs n ≥ 2 and a single common dimension.
    pub fn new(points: Vec<ParamVector>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a path needs at least 2 points, got {}",
                points.len()
            )));
        }
        let m = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != m {
                return Err(Error::shape(
                    format!("path point {i}"),
                    format!("{m} parameters"),
                    format!("{}", p.len()),
                ));
            }
        }
        Ok(Path { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // n ≥ 2 by construction
    }

    pub fn points(&self) -> &[ParamVector] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &ParamVector {
        &self.points[i]
    }

    /// Interpolation coordinates: α_i = i/(n−1).
    pub fn alphas(&self) -> Vec<f64> {
        let d = (self.points.len() - 1) as f64;
        (0..self.points.len()).map(|i| i as f64 / d).collect()
    }
}

/// Elastic-string relaxation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StringConfig {
    /// Elastic constant k coupling neighboring points.
    pub stiffness: f64,
    /// Number of simultaneous (Jacobi) update steps.
    pub steps: usize,
    /// Descent step size η.
    pub eta: f64,
    /// Minibatch size for the training-loss gradient.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for StringConfig {
    fn default() -> Self {
        StringConfig {
            stiffness: 1.0,
            steps: 100,
            eta: 0.01,
            batch_size: 250,
            seed: 0,
        }
    }
}

impl StringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stiffness.is_nan() || self.stiffness < 0.0 || !self.stiffness.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "stiffness must be finite and ≥ 0, got {}",
                self.stiffness
            )));
        }
        if self.eta.is_nan() || self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite and > 0, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// n equally spaced points on the segment from θ_a to θ_b:
/// x_i = (1 − α_i)·θ_a + α_i·θ_b with α_i = i/(n−1).
pub fn linear_path(theta_a: &ParamVector, theta_b: &ParamVector, n: usize) -> Result<Path> {
    if theta_a.len() != theta_b.len() {
        return Err(Error::shape(
            "linear_path endpoints",
            format!("{} parameters", theta_a.len()),
            format!("{}", theta_b.len()),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a path needs at least 2 points, got n={n}"
        )));
    }
    let d = (n - 1) as f64;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = i as f64 / d;
        let mut x = theta_a.clone();
        for (xv, bv) in x.values_mut().iter_mut().zip(theta_b.values()) {
            *xv = ((1.0 - alpha) * (*xv as f64) + alpha * (*bv as f64)) as f32;
        }
        points.push(x);
    }
    Path::new(points)
}

/// The elastic energy ½·k·Σᵢ ‖x_{i+1} − x_i‖² over all n−1 consecutive
/// segments, accumulated in f64.
pub fn elastic_loss(path: &Path, k: f64) -> f64 {
    let mut total = 0.0f64;
    for w in path.points.windows(2) {
        let (a, b) = (w[0].values(), w[1].values());
        let mut seg = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            let d = *y as f64 - *x as f64;
            seg += d * d;
        }
        total += seg;
    }
    0.5 * k * total
}

/// Jacobi relaxation of the interior points under a caller-supplied data
/// gradient: all gradients of one step see the pre-step path, then the
/// updated points are swapped in simultaneously. Endpoints are never
/// touched. Returns the error step and point index on divergence.
fn relax_impl(
    path: &Path,
    cfg: &StringConfig,
    mut data_grad: impl FnMut(usize, &ParamVector) -> Result<ParamVector>,
) -> Result<Path> {
    cfg.validate()?;
    let n = path.len();
    let mut pts = path.points.clone();
    for step in 0..cfg.steps {
        let mut staged = Vec::with_capacity(n.saturating_sub(2));
        for i in 1..n - 1 {
            let g = match data_grad(i, &pts[i]) {
                Ok(g) => g,
                Err(Error::NonFinite { .. }) | Err(Error::Diverged { .. }) => {
                    return Err(Error::StringDiverged { step, point: i })
                }
                Err(e) => return Err(e),
            };
            if g.len() != pts[i].len() {
                return Err(Error::shape(
                    "string relaxation data gradient",
                    format!("{} parameters", pts[i].len()),
                    format!("{}", g.len()),
                ));
            }
            let mut xi = pts[i].clone();
            {
                let prev = pts[i - 1].values();
                let next = pts[i + 1].values();
                let gv = g.values();
                for (j, v) in xi.values_mut().iter_mut().enumerate() {
                    let x = *v as f64;
                    let elastic =
                        cfg.stiffness * (2.0 * x - prev[j] as f64 - next[j] as f64);
                    *v = (x - cfg.eta * (gv[j] as f64 + elastic)) as f32;
                }
            }
            if xi.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::StringDiverged { step, point: i });
            }
            staged.push(xi);
        }
        for (off, xi) in staged.into_iter().enumerate() {
            pts[off + 1] = xi;
        }
    }
    Path::new(pts)
}

/// S simultaneous descent steps on the interior points:
/// x_i ← x_i − η·(∇L_train(x_i) + k·(2x_i − x_{i−1} − x_{i+1})),
/// with the training gradient on seeded minibatches and the elastic term
/// exact. The endpoints come back bitwise unchanged.
pub fn string_relax(
    path: &Path,
    cfg: &StringConfig,
    model: &ModelSpec,
    train_set: &Dataset,
) -> Result<Path> {
    let n = train_set.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "string relaxation needs a nonempty training set".into(),
        ));
    }
    let bs = cfg.batch_size.min(n);
    let mut rng = DetRng::new(cfg.seed, stream::STRING, 0);
    relax_impl(path, cfg, |_, theta| {
        let batch = if bs == n {
            train_set.full_batch()
        } else {
            let mut idx = rng.sample_indices(n, bs);
            idx.sort_unstable();
            train_set.gather(&idx)?
        };
        nn::grad(model, theta, &batch).map(|(_, g)| g)
    })
}

/// String relaxation with the training-loss term disabled: pure elastic
/// descent. The unique fixed point places the interior points equally spaced
/// on the chord between the frozen endpoints (discrete harmonic
/// interpolation), which makes this mode a geometry oracle for the full
/// method.
pub fn elastic_relax(path: &Path, cfg: &StringConfig) -> Result<Path> {
    let layout = std::sync::Arc::clone(path.point(0).layout());
    relax_impl(path, cfg, move |_, _| {
        Ok(ParamVector::zeros(std::sync::Arc::clone(&layout)))
    })
}

/// Row-wise softmax probabilities of (N, C) logits, in f64.
fn softmax_rows(logits: &Tensor) -> Result<Vec<f64>> {
    let &[n, c] = logits.shape() else {
        return Err(Error::shape(
            "softmax_rows",
            "(N, classes) logits",
            format!("{:?}", logits.shape()),
        ));
    };
    let data = logits.data();
    let mut probs = vec![0.0f64; n * c];
    for i in 0..n {
        let row = &data[i * c..][..c];
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let out = &mut probs[i * c..][..c];
        let mut denom = 0.0f64;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = ((v - m) as f64).exp();
            denom += *o;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }
    Ok(probs)
}

/// Class probabilities of one model over a whole dataset, row-major (N, C),
/// forwarded in fixed-size chunks.
fn probs_on(model: &ModelSpec, theta: &ParamVector, data: &Dataset) -> Result<Vec<f64>> {
    let n = data.len();
    let c = model.classes;
    let mut probs = Vec::with_capacity(n * c);
    let mut start = 0;
    while start < n {
        let end = (start + train::EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = data.gather(&idx)?;
        let logits = nn::forward(model, theta, &batch.images)?;
        probs.extend(softmax_rows(&logits)?);
        start = end;
    }
    Ok(probs)
}

/// Mix two models in output space on a single input:
/// (1−α)·softmax(f_a(x)) + α·softmax(f_b(x)). α = 0 is model_a's endpoint.
pub fn output_interpolation(
    model_a: &ModelSpec,
    theta_a: &ParamVector,
    model_b: &ModelSpec,
    theta_b: &ParamVector,
    alpha: f64,
    x: &Tensor,
) -> Result<Vec<f64>> {
    if model_a.classes != model_b.classes {
        return Err(Error::shape(
            "output_interpolation class counts",
            format!("{}", model_a.classes),
            format!("{}", model_b.classes),
        ));
    }
    if alpha.is_nan() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let batch = Tensor::new(shape, x.data().to_vec())?;
    let pa = softmax_rows(&nn::forward(model_a, theta_a, &batch)?)?;
    let pb = softmax_rows(&nn::forward(model_b, theta_b, &batch)?)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect())
}

/// How a profile's points were generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMethod {
    Linear,
    String,
    Output,
}

impl std::fmt::Display for PathMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathMethod::Linear => write!(f, "linear"),
            PathMethod::String => write!(f, "string"),
            PathMethod::Output => write!(f, "output"),
        }
    }
}

/// One profile sample: full-train-set loss and test accuracy at α.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub method: PathMethod,
    pub alpha: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

/// Evaluate every point of a weight-space path on full train loss and test
/// accuracy.
pub fn weight_profile(
    method: PathMethod,
    path: &Path,
    model: &ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<ProfileRow>> {
    let alphas = path.alphas();
    let mut rows = Vec::with_capacity(path.len());
    for (x, alpha) in path.points().iter().zip(alphas) {
        let (train_loss, _) = train::evaluate(model, x, train_set, train::EVAL_BATCH)?;
        let (_, test_accuracy) = train::evaluate(model, x, test_set, train::EVAL_BATCH)?;
        rows.push(ProfileRow {
            method,
            alpha,
            train_loss,
            test_accuracy,
        });
    }
    Ok(rows)
}

/// Evaluate output-space mixtures of two models at n evenly spaced α. Train
/// loss is the cross-entropy −ln p_mix(y); test accuracy is argmax of the
/// mixture (ties to the lowest class, matching logit predictions).
pub fn output_profile(
    model_a: &ModelSpec,
    theta_a: &ParamVector,
    model_b: &ModelSpec,
    theta_b: &ParamVector,
    n: usize,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<ProfileRow>> {
    if model_a.classes != model_b.classes {
        return Err(Error::shape(
            "output_profile class counts",
            format!("{}", model_a.classes),
            format!("{}", model_b.classes),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a profile needs at least 2 points, got n={n}"
        )));
    }
    let c = model_a.classes;
    let train_a = probs_on(model_a, theta_a, train_set)?;
    let train_b = probs_on(model_b, theta_b, train_set)?;
    let test_a = probs_on(model_a, theta_a, test_set)?;
    let test_b = probs_on(model_b, theta_b, test_set)?;

    let d = (n - 1) as f64;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = i as f64 / d;
        let mix = |a: &[f64], b: &[f64], j: usize| (1.0 - alpha) * a[j] + alpha * b[j];

        let mut total = 0.0f64;
        for (s, &y) in train_set.labels.iter().enumerate() {
            total -= mix(&train_a, &train_b, s * c + y as usize).ln();
        }
        let train_loss = total / train_set.len() as f64;

        let mut hits = 0usize;
        for (s, &y) in test_set.labels.iter().enumerate() {
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            for j in 0..c {
                let p = mix(&test_a, &test_b, s * c + j);
                if p > best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best == y as usize {
                hits += 1;
            }
        }
        rows.push(ProfileRow {
            method: PathMethod::Output,
            alpha,
            train_loss,
            test_accuracy: hits as f64 / test_set.len() as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{gen_synthetic, SyntheticConfig};
    use crate::nn::{init_params, LayerSpec};
    use crate::params::ParamLayout;
    use std::sync::Arc;

    fn flat(values: Vec<f32>) -> ParamVector {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        ParamVector::from_values(layout, values).unwrap()
    }

    fn bits(p: &ParamVector) -> Vec<u32> {
        p.values().iter().map(|v| v.to_bits()).collect()
    }

    fn tiny_task() -> (ModelSpec, Dataset, Dataset) {
        let cfg = SyntheticConfig {
            classes: 4,
            canvas: 8,
            pattern: 3,
            train_n: 64,
            test_n: 32,
            noise: 0.3,
        };
        let (train_set, test_set) = gen_synthetic(&cfg, 11).unwrap();
        let model = ModelSpec {
            input: (1, 8, 8),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 64,
                    output: 16,
                    output_shape: None,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 16,
                    output: 4,
                    output_shape: None,
                },
            ],
            classes: 4,
        };
        (model, train_set, test_set)
    }

    #[test]
    fn linear_path_hits_the_textbook_points() {
        // Scalar 0 → 1 with n=5 gives exactly (0, 0.25, 0.5, 0.75, 1).
        let a = flat(vec![0.0]);
        let b = flat(vec![1.0]);
        let path = linear_path(&a, &b, 5).unwrap();
        let xs: Vec<f32> = path.points().iter().map(|p| p.values()[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(path.alphas(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        // n=2 → endpoints only, bitwise.
        let two = linear_path(&a, &b, 2).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(bits(two.point(0)), bits(&a));
        assert_eq!(bits(two.point(1)), bits(&b));

        // Degenerate identical endpoints: the midpoint is θ, bitwise
        // (0.5·t + 0.5·t is exact).
        let t = flat(vec![0.3, -1.7, 42.0]);
        let degen = linear_path(&t, &t, 3).unwrap();
        assert_eq!(bits(degen.point(1)), bits(&t));

        // Errors: dimension mismatch and n < 2.
        assert!(linear_path(&a, &t, 3).is_err());
        assert!(linear_path(&a, &b, 1).is_err());
    }

    #[test]
    fn elastic_loss_arithmetic() {
        // Collinear equally spaced, total length 1, n=5: four segments of
        // length 1/4 → ½·k·4·(1/16) = k/8.
        let a = flat(vec![0.0, 0.0]);
        let b = flat(vec![1.0, 0.0]);
        let path = linear_path(&a, &b, 5).unwrap();
        let k = 2.0;
        assert_eq!(elastic_loss(&path, k), k / 8.0);

        // n=2 → ½·k·‖θ_b − θ_a‖².
        let two = linear_path(&flat(vec![1.0, -2.0]), &flat(vec![4.0, 2.0]), 2).unwrap();
        assert_eq!(elastic_loss(&two, 3.0), 0.5 * 3.0 * 25.0);

        // k = 0 → 0.
        assert_eq!(elastic_loss(&path, 0.0), 0.0);
    }

    #[test]
    fn elastic_loss_translation_and_scaling() {
        // Points on a 0.25 grid: adding 0.5 to every entry is exact in f32,
        // so translation invariance holds bitwise.
        let pts = vec![
            flat(vec![1.0, -3.25]),
            flat(vec![2.5, 0.75]),
            flat(vec![-0.25, 4.0]),
        ];
        let path = Path::new(pts.clone()).unwrap();
        let shifted = Path::new(
            pts.iter()
                .map(|p| {
                    let mut q = p.clone();
                    for v in q.values_mut() {
                        *v += 0.5;
                    }
                    q
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(elastic_loss(&path, 1.7), elastic_loss(&shifted, 1.7));

        // Doubling about the centroid scales the loss by exactly 4 (the
        // construction is symmetric about 0, so the centroid is 0 and 2·x
        // is exact).
        let sym = vec![
            flat(vec![-2.0, -0.5]),
            flat(vec![0.0, 0.0]),
            flat(vec![2.0, 0.5]),
        ];
        let base = Path::new(sym.clone()).unwrap();
        let scaled = Path::new(
            sym.iter()
                .map(|p| {
                    let mut q = p.clone();
                    q.scale(2.0);
                    q
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(elastic_loss(&scaled, 0.3), 4.0 * elastic_loss(&base, 0.3));
    }

    #[test]
    fn zero_steps_leave_the_path_bitwise_unchanged() {
        let (model, train_set, _) = tiny_task();
        let a = init_params(&model, 1).unwrap();
        let b = init_params(&model, 2).unwrap();
        let path = linear_path(&a, &b, 4).unwrap();
        let cfg = StringConfig {
            steps: 0,
            ..StringConfig::default()
        };
        let out = string_relax(&path, &cfg, &model, &train_set).unwrap();
        for (p, q) in path.points().iter().zip(out.points()) {
            assert_eq!(bits(p), bits(q));
        }
    }

    #[test]
    fn pure_elastic_descent_reaches_harmonic_interpolation() {
        // With the data term disabled the fixed point solves
        // 2x_i = x_{i−1} + x_{i+1}: equally spaced points on the chord.
        let a = flat(vec![0.0, 1.0, -2.0]);
        let b = flat(vec![4.0, -1.0, 2.0]);
        let lin = linear_path(&a, &b, 5).unwrap();
        let mut rng = DetRng::new(3, stream::STRING, 99);
        let noisy = Path::new(
            lin.points()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut q = p.clone();
                    if i != 0 && i != 4 {
                        for v in q.values_mut() {
                            *v += 0.5 * rng.standard_normal_f32();
                        }
                    }
                    q
                })
                .collect(),
        )
        .unwrap();
        let cfg = StringConfig {
            stiffness: 1.0,
            steps: 400,
            eta: 0.25,
            batch_size: 1,
            seed: 0,
        };
        let relaxed = elastic_relax(&noisy, &cfg).unwrap();

        // Endpoints untouched, interior at the discrete-harmonic fixed point.
        assert_eq!(bits(relaxed.point(0)), bits(&a));
        assert_eq!(bits(relaxed.point(4)), bits(&b));
        for i in 1..4 {
            let (xm, x, xp) = (
                relaxed.point(i - 1).values(),
                relaxed.point(i).values(),
                relaxed.point(i + 1).values(),
            );
            let mut resid = 0.0f64;
            let mut to_lin = 0.0f64;
            for j in 0..x.len() {
                let r = 2.0 * x[j] as f64 - xm[j] as f64 - xp[j] as f64;
                resid += r * r;
                let d = x[j] as f64 - lin.point(i).values()[j] as f64;
                to_lin += d * d;
            }
            assert!(resid.sqrt() <= 1e-5, "point {i}: residual {}", resid.sqrt());
            assert!(
                to_lin.sqrt() <= 1e-4,
                "point {i}: {} from the chord",
                to_lin.sqrt()
            );
        }
    }

    #[test]
    fn high_stiffness_recovers_the_linear_path() {
        let (model, train_set, _) = tiny_task();
        let a = init_params(&model, 1).unwrap();
        let b = init_params(&model, 2).unwrap();
        let lin = linear_path(&a, &b, 5).unwrap();
        // Kick the interior points well off the chord, then relax with a
        // very stiff string: the data term is overwhelmed and the output
        // lands back on the linear path to within 1% of the endpoint
        // separation.
        let mut rng = DetRng::new(7, stream::STRING, 98);
        let mut sep = b.clone();
        sep.add_scaled(-1.0, &a);
        let scale = sep.norm_l2();
        let noisy = Path::new(
            lin.points()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut q = p.clone();
                    if i != 0 && i != 4 {
                        for v in q.values_mut() {
                            *v += 0.05 * rng.standard_normal_f32();
                        }
                    }
                    q
                })
                .collect(),
        )
        .unwrap();
        let k = 1e4;
        let cfg = StringConfig {
            stiffness: k,
            steps: 150,
            eta: 0.2 / k, // η·k = 0.2 keeps the Jacobi iteration stable
            batch_size: 16,
            seed: 5,
        };
        let relaxed = string_relax(&noisy, &cfg, &model, &train_set).unwrap();
        assert_eq!(bits(relaxed.point(0)), bits(&a));
        assert_eq!(bits(relaxed.point(4)), bits(&b));
        for i in 1..4 {
            let mut d = relaxed.point(i).clone();
            d.add_scaled(-1.0, lin.point(i));
            let dist = d.norm_l2();
            assert!(
                dist <= 1e-2 * scale,
                "point {i}: {dist} from the chord (scale {scale})"
            );
        }
    }

    #[test]
    fn explosive_steps_report_divergence() {
        // η·k = 10 amplifies the elastic update ~19× per step; f32 overflows
        // within a few dozen steps and the error names where.
        let a = flat(vec![0.0, 0.0]);
        let b = flat(vec![1.0, 1.0]);
        let lin = linear_path(&a, &b, 5).unwrap();
        let mut noisy = lin.points().to_vec();
        noisy[2].values_mut()[0] += 1.0;
        let path = Path::new(noisy).unwrap();
        let cfg = StringConfig {
            stiffness: 40.0,
            steps: 200,
            eta: 0.25,
            batch_size: 1,
            seed: 0,
        };
        let layout = Arc::clone(a.layout());
        let err = relax_impl(&path, &cfg, |_, _| {
            Ok(ParamVector::zeros(Arc::clone(&layout)))
        })
        .unwrap_err();
        match err {
            Error::StringDiverged { step, point } => {
                assert!(step > 0 && step < 200, "step {step}");
                assert!((1..=3).contains(&point), "point {point}");
            }
            other => panic!("expected StringDiverged, got {other}"),
        }
    }

    #[test]
    fn output_interpolation_endpoints_and_simplex() {
        let (model, train_set, _) = tiny_task();
        let a = init_params(&model, 3).unwrap();
        let b = init_params(&model, 4).unwrap();
        let x = {
            let batch = train_set.gather(&[0]).unwrap();
            Tensor::new(vec![1, 8, 8], batch.images.data().to_vec()).unwrap()
        };

        let pa = output_interpolation(&model, &a, &model, &b, 0.0, &x).unwrap();
        let pb = output_interpolation(&model, &a, &model, &b, 1.0, &x).unwrap();
        let direct_a = {
            let batch = Tensor::new(vec![1, 1, 8, 8], x.data().to_vec()).unwrap();
            softmax_rows(&nn::forward(&model, &a, &batch).unwrap()).unwrap()
        };
        assert_eq!(pa, direct_a, "α=0 must be exactly model_a's output");
        for alpha in [0.0, 0.3, 0.7, 1.0] {
            let p = output_interpolation(&model, &a, &model, &b, alpha, &x).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "α={alpha}: sum {sum}");
            assert!(p.iter().all(|v| *v >= 0.0));
        }
        let _ = pb;

        assert!(output_interpolation(&model, &a, &model, &b, 1.5, &x).is_err());
        assert!(output_interpolation(&model, &a, &model, &b, -0.1, &x).is_err());
    }

    #[test]
    fn profiles_agree_with_direct_evaluation_at_the_endpoints() {
        let (model, train_set, test_set) = tiny_task();
        let a = init_params(&model, 5).unwrap();
        let b = init_params(&model, 6).unwrap();

        let path = linear_path(&a, &b, 3).unwrap();
        let rows = weight_profile(PathMethod::Linear, &path, &model, &train_set, &test_set)
            .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].alpha, 0.0);
        assert_eq!(rows[2].alpha, 1.0);
        let (la, _) = train::evaluate(&model, &a, &train_set, train::EVAL_BATCH).unwrap();
        let (_, acc_a) = train::evaluate(&model, &a, &test_set, train::EVAL_BATCH).unwrap();
        let (lb, _) = train::evaluate(&model, &b, &train_set, train::EVAL_BATCH).unwrap();
        let (_, acc_b) = train::evaluate(&model, &b, &test_set, train::EVAL_BATCH).unwrap();
        assert_eq!(rows[0].train_loss, la);
        assert_eq!(rows[0].test_accuracy, acc_a);
        assert_eq!(rows[2].train_loss, lb);
        assert_eq!(rows[2].test_accuracy, acc_b);
        assert!(rows.iter().all(|r| r.method == PathMethod::Linear));

        let out = output_profile(&model, &a, &model, &b, 5, &train_set, &test_set).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0].test_accuracy, acc_a);
        assert_eq!(out[4].test_accuracy, acc_b);
        assert!(out.iter().all(|r| r.method == PathMethod::Output));
        // Mixture cross-entropy at the endpoints equals the model's own
        // cross-entropy up to f64 evaluation-order differences.
        assert!((out[0].train_loss - la).abs() <= 1e-12 * (1.0 + la.abs()));
        assert!((out[4].train_loss - lb).abs() <= 1e-12 * (1.0 + lb.abs()));
    }
}
