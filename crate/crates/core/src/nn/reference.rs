//! Independent 64-bit reference forward pass.
//!
//! A deliberately naive second implementation of the layer semantics —
//! direct convolution loops, no im2col, no blocking, f64 activations —
//! sharing nothing with the engine's forward code except the `ModelSpec`
//! vocabulary. It exists to test the engine: the fast path must agree with
//! this one, and finite differences over this path are accurate enough
//! (f64) to check reverse-mode gradients. Dropout runs in eval mode
//! (identity); this path never trains.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{LayerShape, LayerSpec, ModelSpec};
use crate::params::{ParamKind, ParamVector};

/// Logits for a batch, shape (N, classes) row-major, computed in f64.
pub fn logits_f64(model: &ModelSpec, theta: &ParamVector, x: &crate::Tensor) -> Result<Vec<f64>> {
    let chain = model.validate()?;
    let &[n, xc, xh, xw] = x.shape() else {
        return Err(Error::shape(
            "reference input",
            "(N, C, H, W)",
            format!("{:?}", x.shape()),
        ));
    };
    if (xc, xh, xw) != model.input {
        return Err(Error::shape(
            "reference input",
            format!("{:?}", model.input),
            format!("{:?}", (xc, xh, xw)),
        ));
    }
    let layout = theta.layout().clone();
    let mut out = Vec::with_capacity(n * model.classes);
    for s in 0..n {
        let vol = model.input_volume();
        let mut cur: Vec<f64> = x.data()[s * vol..][..vol].iter().map(|v| *v as f64).collect();
        let mut shape = LayerShape::Spatial {
            c: model.input.0,
            h: model.input.1,
            w: model.input.2,
        };
        for (i, layer) in model.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv(spec) => {
                    let LayerShape::Spatial { c, h, w } = shape else { unreachable!() };
                    let LayerShape::Spatial { h: oh, w: ow, .. } = chain[i] else {
                        unreachable!()
                    };
                    let wseg = layout.segment(i, ParamKind::Weight).unwrap();
                    let bseg = layout.segment(i, ParamKind::Bias).unwrap();
                    let wv = theta.slice(wseg);
                    let bv = theta.slice(bseg);
                    let mut next = vec![0.0f64; spec.c_out * oh * ow];
                    for oc in 0..spec.c_out {
                        for io in 0..oh {
                            for jo in 0..ow {
                                let mut acc = bv[oc] as f64;
                                for ic in 0..c {
                                    for u in 0..spec.k {
                                        for v in 0..spec.k {
                                            let ii = (io * spec.s + u) as isize - spec.p as isize;
                                            let jj = (jo * spec.s + v) as isize - spec.p as isize;
                                            if ii < 0
                                                || jj < 0
                                                || ii >= h as isize
                                                || jj >= w as isize
                                            {
                                                continue;
                                            }
                                            let xv = cur
                                                [ic * h * w + ii as usize * w + jj as usize];
                                            let wv = wv[((oc * c + ic) * spec.k + u) * spec.k
                                                + v]
                                                as f64;
                                            acc += wv * xv;
                                        }
                                    }
                                }
                                next[oc * oh * ow + io * ow + jo] = acc;
                            }
                        }
                    }
                    cur = next;
                }
                LayerSpec::Dense { input, output, .. } => {
                    let wseg = layout.segment(i, ParamKind::Weight).unwrap();
                    let bseg = layout.segment(i, ParamKind::Bias).unwrap();
                    let wv = theta.slice(wseg);
                    let bv = theta.slice(bseg);
                    let mut next = vec![0.0f64; *output];
                    for (o, slot) in next.iter_mut().enumerate() {
                        let mut acc = bv[o] as f64;
                        for j in 0..*input {
                            acc += wv[o * input + j] as f64 * cur[j];
                        }
                        *slot = acc;
                    }
                    cur = next;
                }
                LayerSpec::Relu => {
                    for v in &mut cur {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    let LayerShape::Spatial { c, h, w } = shape else { unreachable!() };
                    let LayerShape::Spatial { h: oh, w: ow, .. } = chain[i] else {
                        unreachable!()
                    };
                    let mut next = vec![0.0f64; c * oh * ow];
                    for ch in 0..c {
                        for po in 0..oh {
                            for qo in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for u in 0..*window {
                                    for v in 0..*window {
                                        let val = cur[ch * h * w
                                            + (po * stride + u) * w
                                            + (qo * stride + v)];
                                        if val > best {
                                            best = val;
                                        }
                                    }
                                }
                                next[ch * oh * ow + po * ow + qo] = best;
                            }
                        }
                    }
                    cur = next;
                }
                LayerSpec::Dropout { .. } | LayerSpec::Flatten => {}
            }
            shape = chain[i];
        }
        out.extend_from_slice(&cur);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch, all in f64.
pub fn loss_f64(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    let logits = logits_f64(model, theta, &batch.images)?;
    let n = batch.labels.len();
    let c = model.classes;
    if n == 0 || logits.len() != n * c {
        return Err(Error::shape(
            "reference loss",
            format!("{} logits", n * c),
            format!("{}", logits.len()),
        ));
    }
    let mut total = 0.0f64;
    for i in 0..n {
        let row = &logits[i * c..][..c];
        let y = batch.labels[i] as usize;
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += denom.ln() - (row[y] - m);
    }
    Ok(total / n as f64)
}
