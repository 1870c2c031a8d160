//! Independent reference implementations used as oracles by the integration
//! tests: a naive nested-loop f64 forward pass (no im2col, no blocking, no
//! shared code with the production kernels), kink-margin extraction for
//! finite-difference validity, and a dense finite-difference Hessian.
//!
//! Each integration-test target compiles this module separately, so not every
//! target uses every helper.
#![allow(dead_code)]

use efcn_core::data::Batch;
use efcn_core::nn::{self, ConvSpec, LayerSpec, ModelSpec};
use efcn_core::params::{ParamKind, ParamVector};
use efcn_core::tensor::Tensor;
use nalgebra::DMatrix;

/// One sample's activation volume with its logical shape.
#[derive(Clone, Debug)]
pub struct Volume {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Volume {
    fn at(&self, c: usize, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i >= self.h as i64 || j >= self.w as i64 {
            0.0
        } else {
            self.data[(c * self.h + i as usize) * self.w + j as usize]
        }
    }
}

fn ref_conv(x: &Volume, spec: &ConvSpec, w: &[f32], b: &[f32]) -> Volume {
    let out_h = (x.h + 2 * spec.p - spec.k) / spec.s + 1;
    let out_w = (x.w + 2 * spec.p - spec.k) / spec.s + 1;
    let mut out = Volume {
        c: spec.c_out,
        h: out_h,
        w: out_w,
        data: vec![0.0; spec.c_out * out_h * out_w],
    };
    for oc in 0..spec.c_out {
        for io in 0..out_h {
            for jo in 0..out_w {
                let mut acc = b[oc] as f64;
                for ic in 0..spec.c_in {
                    for u in 0..spec.k {
                        for v in 0..spec.k {
                            let wi = ((oc * spec.c_in + ic) * spec.k + u) * spec.k + v;
                            let ii = (io * spec.s + u) as i64 - spec.p as i64;
                            let jj = (jo * spec.s + v) as i64 - spec.p as i64;
                            acc += w[wi] as f64 * x.at(ic, ii, jj);
                        }
                    }
                }
                out.data[(oc * out_h + io) * out_w + jo] = acc;
            }
        }
    }
    out
}

fn ref_pool(x: &Volume, window: usize, stride: usize) -> Volume {
    let out_h = (x.h - window) / stride + 1;
    let out_w = (x.w - window) / stride + 1;
    let mut out = Volume {
        c: x.c,
        h: out_h,
        w: out_w,
        data: vec![0.0; x.c * out_h * out_w],
    };
    for c in 0..x.c {
        for io in 0..out_h {
            for jo in 0..out_w {
                let mut m = f64::NEG_INFINITY;
                for u in 0..window {
                    for v in 0..window {
                        m = m.max(x.at(c, (io * stride + u) as i64, (jo * stride + v) as i64));
                    }
                }
                out.data[(c * out_h + io) * out_w + jo] = m;
            }
        }
    }
    out
}

/// Per-sample forward trace: activations after every layer (dropout is the
/// identity here — this is the evaluation path).
pub struct Trace {
    /// Activation volume after each layer, `after[l]` = output of layer l.
    pub after: Vec<Volume>,
    /// Minimum |pre-activation| over every ReLU input encountered.
    pub relu_margin: f64,
    /// Minimum (max − runner-up) over every pooling window encountered.
    pub pool_gap: f64,
}

fn pool_window_gap(x: &Volume, window: usize, stride: usize) -> f64 {
    let out_h = (x.h - window) / stride + 1;
    let out_w = (x.w - window) / stride + 1;
    let mut gap = f64::INFINITY;
    if window * window < 2 {
        return gap;
    }
    for c in 0..x.c {
        for io in 0..out_h {
            for jo in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for u in 0..window {
                    for v in 0..window {
                        let val =
                            x.at(c, (io * stride + u) as i64, (jo * stride + v) as i64);
                        if val > best {
                            second = best;
                            best = val;
                        } else if val > second {
                            second = val;
                        }
                    }
                }
                gap = gap.min(best - second);
            }
        }
    }
    gap
}

/// Reference forward for one sample (f64 end to end).
pub fn ref_trace(model: &ModelSpec, theta: &ParamVector, image: &[f32]) -> Trace {
    let (c0, h0, w0) = model.input;
    assert_eq!(image.len(), c0 * h0 * w0);
    let mut cur = Volume {
        c: c0,
        h: h0,
        w: w0,
        data: image.iter().map(|v| *v as f64).collect(),
    };
    let layout = theta.layout().clone();
    let mut after = Vec::with_capacity(model.layers.len());
    let mut relu_margin = f64::INFINITY;
    let mut pool_gap = f64::INFINITY;
    for (l, layer) in model.layers.iter().enumerate() {
        cur = match layer {
            LayerSpec::Conv(spec) => {
                let wseg = layout.segment(l, ParamKind::Weight).unwrap();
                let bseg = layout.segment(l, ParamKind::Bias).unwrap();
                ref_conv(&cur, spec, theta.slice(wseg), theta.slice(bseg))
            }
            LayerSpec::Relu => {
                for v in &cur.data {
                    relu_margin = relu_margin.min(v.abs());
                }
                Volume {
                    data: cur.data.iter().map(|v| v.max(0.0)).collect(),
                    ..cur
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                pool_gap = pool_gap.min(pool_window_gap(&cur, *window, *stride));
                ref_pool(&cur, *window, *stride)
            }
            LayerSpec::Flatten => Volume {
                c: 1,
                h: 1,
                w: cur.data.len(),
                data: cur.data,
            },
            LayerSpec::Dense {
                input,
                output,
                output_shape,
            } => {
                assert_eq!(cur.data.len(), *input);
                let wseg = layout.segment(l, ParamKind::Weight).unwrap();
                let bseg = layout.segment(l, ParamKind::Bias).unwrap();
                let w = theta.slice(wseg);
                let b = theta.slice(bseg);
                let mut out = vec![0.0f64; *output];
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = b[r] as f64;
                    for (j, xv) in cur.data.iter().enumerate() {
                        acc += w[r * input + j] as f64 * xv;
                    }
                    *o = acc;
                }
                let (c, h, w) = output_shape.unwrap_or((1, 1, *output));
                Volume {
                    c,
                    h,
                    w,
                    data: out,
                }
            }
            LayerSpec::Dropout { .. } => cur, // identity in evaluation mode
        };
        after.push(cur.clone());
    }
    Trace {
        after,
        relu_margin,
        pool_gap,
    }
}

/// Reference logits for a whole batch, row-major (N, classes).
pub fn ref_logits(model: &ModelSpec, theta: &ParamVector, images: &Tensor) -> Vec<f64> {
    let shape = images.shape();
    let n = shape[0];
    let vol: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(n * model.classes);
    for i in 0..n {
        let trace = ref_trace(model, theta, &images.data()[i * vol..][..vol]);
        let last = trace.after.last().unwrap();
        assert_eq!(last.data.len(), model.classes);
        out.extend_from_slice(&last.data);
    }
    out
}

/// Smallest kink margins over a batch: (min |ReLU pre-activation|,
/// min pooling-window gap). Finite differences with per-coordinate step ε
/// are trustworthy when these comfortably exceed the activation shift ε can
/// cause.
pub fn kink_margins(model: &ModelSpec, theta: &ParamVector, images: &Tensor) -> (f64, f64) {
    let shape = images.shape();
    let n = shape[0];
    let vol: usize = shape[1..].iter().product();
    let mut relu = f64::INFINITY;
    let mut pool = f64::INFINITY;
    for i in 0..n {
        let t = ref_trace(model, theta, &images.data()[i * vol..][..vol]);
        relu = relu.min(t.relu_margin);
        pool = pool.min(t.pool_gap);
    }
    (relu, pool)
}

/// Dense Hessian of the batch loss by central differences of the analytic
/// gradient, symmetrized.
pub fn fd_hessian(model: &ModelSpec, theta: &ParamVector, batch: &Batch, eps: f32) -> DMatrix<f64> {
    let n = theta.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let orig = theta.values()[j];
        let mut plus = theta.clone();
        plus.values_mut()[j] = orig + eps;
        let mut minus = theta.clone();
        minus.values_mut()[j] = orig - eps;
        let (_, gp) = nn::grad(model, &plus, batch).unwrap();
        let (_, gm) = nn::grad(model, &minus, batch).unwrap();
        let span = (plus.values()[j] - minus.values()[j]) as f64;
        for i in 0..n {
            h[(i, j)] = (gp.values()[i] as f64 - gm.values()[i] as f64) / span;
        }
    }
    let sym = (h.clone() + h.transpose()) * 0.5;
    sym
}
