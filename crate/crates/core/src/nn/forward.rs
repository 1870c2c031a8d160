//! Forward execution, loss, and reverse-mode gradients over a [`ModelSpec`].
//!
//! One engine runs everything: `forward` (inference), `forward_recorded`
//! (taped, for backward), and the `grad`/`grad_train` wrappers. The static
//! shape chain from [`ModelSpec::validate`] drives all buffer sizes; every
//! layer output is checked finite so a NaN is reported with the layer that
//! produced it rather than surfacing later as a corrupt loss.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{layers, ConvSpec, LayerShape, LayerSpec, ModelSpec};
use crate::params::{ParamKind, ParamVector};
use crate::rng::DetRng;
use crate::tensor::kernels::ConvGeom;
use crate::tensor::tape::{GradTape, SavedState};
use crate::tensor::Tensor;

fn layer_op(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Conv(_) => "conv",
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::Relu => "relu",
        LayerSpec::MaxPool { .. } => "maxpool",
        LayerSpec::Dropout { .. } => "dropout",
        LayerSpec::Flatten => "flatten",
    }
}

fn shape_before(model: &ModelSpec, chain: &[LayerShape], i: usize) -> LayerShape {
    if i == 0 {
        let (c, h, w) = model.input;
        LayerShape::Spatial { c, h, w }
    } else {
        chain[i - 1]
    }
}

fn geom_for(spec: &ConvSpec, before: LayerShape, after: LayerShape) -> ConvGeom {
    let (LayerShape::Spatial { c, h, w }, LayerShape::Spatial { h: oh, w: ow, .. }) =
        (before, after)
    else {
        unreachable!("validate() admits conv only between spatial shapes");
    };
    debug_assert_eq!(c, spec.c_in);
    ConvGeom {
        c_in: spec.c_in,
        h,
        w,
        k: spec.k,
        s: spec.s,
        p: spec.p,
        out_h: oh,
        out_w: ow,
    }
}

/// Largest im2col scratch needed by any conv layer.
fn max_col_len(model: &ModelSpec, chain: &[LayerShape]) -> usize {
    model
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            LayerSpec::Conv(spec) => {
                let g = geom_for(spec, shape_before(model, chain, i), chain[i]);
                Some(g.positions() * g.patch())
            }
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

fn check_input(model: &ModelSpec, theta: &ParamVector, x: &Tensor) -> Result<usize> {
    let (c, h, w) = model.input;
    match *x.shape() {
        [n, xc, xh, xw] if (xc, xh, xw) == (c, h, w) && n > 0 => {
            if theta.len() != model.param_count() {
                return Err(Error::shape(
                    "forward parameters",
                    format!("{} values", model.param_count()),
                    format!("{} values", theta.len()),
                ));
            }
            Ok(n)
        }
        _ => Err(Error::shape(
            "forward input",
            format!("(N, {c}, {h}, {w})"),
            format!("{:?}", x.shape()),
        )),
    }
}

/// One pass through the layers. `dropout` being `Some` is the training flag;
/// `tape` being `Some` records what backward will need.
fn run(
    model: &ModelSpec,
    chain: &[LayerShape],
    theta: &ParamVector,
    x: &Tensor,
    mut dropout: Option<&mut DetRng>,
    mut tape: Option<&mut GradTape>,
) -> Result<Tensor> {
    let n = check_input(model, theta, x)?;
    let mut col = vec![0.0f32; max_col_len(model, chain)];
    let mut cur: Vec<f32> = x.data().to_vec();
    let layout = theta.layout().clone();

    for (i, layer) in model.layers.iter().enumerate() {
        let before = shape_before(model, chain, i);
        match layer {
            LayerSpec::Conv(spec) => {
                let g = geom_for(spec, before, chain[i]);
                let w_seg = layout.segment(i, ParamKind::Weight).expect("conv weights");
                let b_seg = layout.segment(i, ParamKind::Bias).expect("conv bias");
                let mut out = vec![0.0f32; n * spec.c_out * g.positions()];
                layers::conv_forward(
                    &cur,
                    n,
                    &g,
                    spec.c_out,
                    theta.slice(w_seg),
                    theta.slice(b_seg),
                    &mut col[..g.positions() * g.patch()],
                    &mut out,
                );
                if let Some(t) = tape.as_deref_mut() {
                    let input =
                        Tensor::new(vec![n, g.c_in, g.h, g.w], std::mem::take(&mut cur))?;
                    t.push(i, SavedState::Conv { input });
                }
                cur = out;
            }
            LayerSpec::Dense { input, output, .. } => {
                let w_seg = layout.segment(i, ParamKind::Weight).expect("dense weights");
                let b_seg = layout.segment(i, ParamKind::Bias).expect("dense bias");
                let mut out = vec![0.0f32; n * output];
                layers::dense_forward(
                    &cur,
                    n,
                    *input,
                    *output,
                    theta.slice(w_seg),
                    theta.slice(b_seg),
                    &mut out,
                );
                if let Some(t) = tape.as_deref_mut() {
                    let saved = Tensor::new(vec![n, *input], std::mem::take(&mut cur))?;
                    t.push(i, SavedState::Dense { input: saved });
                }
                cur = out;
            }
            LayerSpec::Relu => {
                layers::relu_forward(&mut cur);
                if let Some(t) = tape.as_deref_mut() {
                    let output = Tensor::new(vec![cur.len()], cur.clone())?;
                    t.push(i, SavedState::Relu { output });
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                let LayerShape::Spatial { c, h, w } = before else {
                    unreachable!("validated")
                };
                let LayerShape::Spatial { h: oh, w: ow, .. } = chain[i] else {
                    unreachable!("validated")
                };
                let mut out = vec![0.0f32; n * c * oh * ow];
                let mut argmax = vec![0u32; out.len()];
                layers::maxpool_forward(
                    &cur, n * c, h, w, *window, *stride, oh, ow, &mut out, &mut argmax,
                );
                if let Some(t) = tape.as_deref_mut() {
                    t.push(i, SavedState::MaxPool { argmax });
                }
                cur = out;
            }
            LayerSpec::Dropout { rate } => {
                if let (Some(rng), true) = (dropout.as_deref_mut(), *rate > 0.0) {
                    if !(*rate < 1.0) {
                        return Err(Error::LayerGeometry {
                            layer: i,
                            op: "dropout",
                            message: format!("rate {rate} not in [0, 1)"),
                        });
                    }
                    let mut mask = Vec::new();
                    layers::dropout_forward_train(&mut cur, *rate, rng, &mut mask);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(i, SavedState::Dropout { mask });
                    }
                }
                // eval mode or rate 0: identity, nothing recorded
            }
            LayerSpec::Flatten => {
                if let Some(t) = tape.as_deref_mut() {
                    t.push(i, SavedState::Flatten);
                }
            }
        }
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("layer {i} ({}) output", layer_op(layer)),
            });
        }
    }
    Tensor::new(vec![n, model.classes], cur)
}

/// Inference-mode logits (dropout inactive).
pub fn forward(model: &ModelSpec, theta: &ParamVector, x: &Tensor) -> Result<Tensor> {
    let chain = model.validate()?;
    run(model, &chain, theta, x, None, None)
}

/// Training-mode logits: dropout layers draw masks from `dropout_rng`.
pub fn forward_train(
    model: &ModelSpec,
    theta: &ParamVector,
    x: &Tensor,
    dropout_rng: &mut DetRng,
) -> Result<Tensor> {
    let chain = model.validate()?;
    run(model, &chain, theta, x, Some(dropout_rng), None)
}

/// Taped forward pass; `dropout_rng` turns training mode on.
pub fn forward_recorded(
    model: &ModelSpec,
    theta: &ParamVector,
    x: &Tensor,
    dropout_rng: Option<&mut DetRng>,
    tape: &mut GradTape,
) -> Result<Tensor> {
    let chain = model.validate()?;
    run(model, &chain, theta, x, dropout_rng, Some(tape))
}

/// Mean softmax cross-entropy and its logit gradient (already divided by the
/// batch size). Per-sample terms use a stable log-sum-exp with 64-bit
/// accumulation.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    let &[n, c] = logits.shape() else {
        return Err(Error::shape(
            "softmax_cross_entropy",
            "(N, classes) logits",
            format!("{:?}", logits.shape()),
        ));
    };
    if labels.len() != n || n == 0 {
        return Err(Error::shape(
            "softmax_cross_entropy labels",
            format!("{n} labels"),
            format!("{}", labels.len()),
        ));
    }
    let data = logits.data();
    let mut dlogits = vec![0.0f32; n * c];
    let mut exps = vec![0.0f64; c];
    let mut total = 0.0f64;
    let inv_n = 1.0f64 / n as f64;
    for i in 0..n {
        let y = labels[i] as usize;
        if y >= c {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {c} classes (sample {i})"
            )));
        }
        let row = &data[i * c..][..c];
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0f64;
        for (e, &v) in exps.iter_mut().zip(row) {
            *e = ((v - m) as f64).exp();
            denom += *e;
        }
        total += denom.ln() - (row[y] - m) as f64;
        let drow = &mut dlogits[i * c..][..c];
        for (j, d) in drow.iter_mut().enumerate() {
            let p = exps[j] / denom;
            *d = ((p - if j == y { 1.0 } else { 0.0 }) * inv_n) as f32;
        }
    }
    let mean = total * inv_n;
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            context: "softmax cross-entropy".into(),
        });
    }
    Ok((mean, Tensor::new(vec![n, c], dlogits)?))
}

/// Argmax class per row; ties go to the lowest class index.
pub fn predictions(logits: &Tensor) -> Vec<u32> {
    let &[n, c] = logits.shape() else {
        return Vec::new();
    };
    let data = logits.data();
    (0..n)
        .map(|i| {
            let row = &data[i * c..][..c];
            let mut best = 0usize;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy(logits: &Tensor, labels: &[u32]) -> f64 {
    let preds = predictions(logits);
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / preds.len() as f64
}

/// Mean softmax cross-entropy of the model on a batch (dropout inactive).
pub fn loss(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    let logits = forward(model, theta, &batch.images)?;
    Ok(softmax_cross_entropy(&logits, &batch.labels)?.0)
}

fn grad_impl(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    dropout_rng: Option<&mut DetRng>,
) -> Result<(f64, ParamVector)> {
    let chain = model.validate()?;
    let mut tape = GradTape::new();
    let logits = run(model, &chain, theta, &batch.images, dropout_rng, Some(&mut tape))?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
    let grad = backward(model, &chain, theta, &tape, dlogits)?;
    Ok((loss, grad))
}

/// Loss and exact reverse-mode gradient, dropout inactive. This is the
/// deterministic objective used by probes and finite-difference consumers.
pub fn grad(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    grad_impl(model, theta, batch, None)
}

/// Loss and gradient with dropout masks drawn from `dropout_rng` (the
/// training path).
pub fn grad_train(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    dropout_rng: &mut DetRng,
) -> Result<(f64, ParamVector)> {
    grad_impl(model, theta, batch, Some(dropout_rng))
}

/// Reverse sweep over a recorded tape. The adjoint buffer starts at dlogits
/// and rolls backward; parameter gradients accumulate into a fresh vector
/// with the same layout as `theta`.
fn backward(
    model: &ModelSpec,
    chain: &[LayerShape],
    theta: &ParamVector,
    tape: &GradTape,
    dlogits: Tensor,
) -> Result<ParamVector> {
    let n = dlogits.shape()[0];
    let layout = theta.layout().clone();
    let mut grad = ParamVector::zeros(layout.clone());
    let mut col = vec![0.0f32; max_col_len(model, chain)];
    let mut dcol = vec![0.0f32; col.len()];
    let mut cur = dlogits.into_data();

    for (pos, node) in tape.nodes().iter().enumerate().rev() {
        let i = node.layer;
        let before = shape_before(model, chain, i);
        // The very first node has nothing upstream to receive an input
        // gradient, so its dx is skipped (often the widest layer).
        let need_dx = pos > 0;
        match (&model.layers[i], &node.saved) {
            (LayerSpec::Conv(spec), SavedState::Conv { input }) => {
                let g = geom_for(spec, before, chain[i]);
                let w_seg = layout.segment(i, ParamKind::Weight).expect("conv weights");
                let b_seg = layout.segment(i, ParamKind::Bias).expect("conv bias");
                let w_len = w_seg.len;
                let slab_start = w_seg.offset;
                let slab_end = b_seg.offset + b_seg.len;
                let w = theta.slice(w_seg);
                let mut dx = if need_dx {
                    vec![0.0f32; n * g.c_in * g.h * g.w]
                } else {
                    Vec::new()
                };
                let slab = &mut grad.values_mut()[slab_start..slab_end];
                let (dw, db) = slab.split_at_mut(w_len);
                layers::conv_backward(
                    input.data(),
                    n,
                    &g,
                    spec.c_out,
                    w,
                    &cur,
                    &mut col[..g.positions() * g.patch()],
                    &mut dcol[..g.positions() * g.patch()],
                    dw,
                    db,
                    &mut dx,
                );
                if need_dx {
                    cur = dx;
                }
            }
            (LayerSpec::Dense { input: din, output: dout, .. }, SavedState::Dense { input }) => {
                let w_seg = layout.segment(i, ParamKind::Weight).expect("dense weights");
                let b_seg = layout.segment(i, ParamKind::Bias).expect("dense bias");
                let w_len = w_seg.len;
                let slab_start = w_seg.offset;
                let slab_end = b_seg.offset + b_seg.len;
                let w = theta.slice(w_seg);
                let mut dx = if need_dx { vec![0.0f32; n * din] } else { Vec::new() };
                let slab = &mut grad.values_mut()[slab_start..slab_end];
                let (dw, db) = slab.split_at_mut(w_len);
                layers::dense_backward(input.data(), n, *din, *dout, w, &cur, dw, db, &mut dx);
                if need_dx {
                    cur = dx;
                }
            }
            (LayerSpec::Relu, SavedState::Relu { output }) => {
                layers::relu_backward(output.data(), &mut cur);
            }
            (LayerSpec::MaxPool { .. }, SavedState::MaxPool { argmax }) => {
                let LayerShape::Spatial { c, h, w } = before else {
                    unreachable!("validated")
                };
                let LayerShape::Spatial { h: oh, w: ow, .. } = chain[i] else {
                    unreachable!("validated")
                };
                let mut dx = vec![0.0f32; n * c * h * w];
                layers::maxpool_backward(argmax, &cur, n * c, h, w, oh * ow, &mut dx);
                cur = dx;
            }
            (LayerSpec::Dropout { .. }, SavedState::Dropout { mask }) => {
                layers::dropout_backward(mask, &mut cur);
            }
            (LayerSpec::Flatten, SavedState::Flatten) => {}
            (spec, saved) => {
                return Err(Error::InvalidArgument(format!(
                    "tape node {pos} (layer {i}) does not match the model: {spec:?} vs {saved:?}"
                )))
            }
        }
    }
    Ok(grad)
}
