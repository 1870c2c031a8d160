//! Layer vocabulary, model specifications, and the forward/loss/gradient
//! entry points.
//!
//! A [`ModelSpec`] is an ordered list of [`LayerSpec`]s plus an input shape
//! and class count. The layer set is exactly what the embedding has to
//! preserve: convolution, dense, relu, max-pool, dropout, flatten. Shape
//! consistency is checked statically by [`ModelSpec::validate`], which
//! returns the activation shape after every layer; the forward pass never
//! infers shapes on its own.
//!
//! Dense layers may carry an `output_shape`: the layer's flat output is
//! reinterpreted as (C,H,W) so pooling can follow it. That is how an
//! embedded convolution keeps its place in front of the original max-pool.
//! Since flattening is channel-major — flat(c,i,j) = c·H·W + i·W + j, the
//! row-major layout itself — these reinterpretations never move data.

mod build;
mod forward;
mod init;
pub mod layers;
pub mod reference;

pub use build::{build_fcn_from, build_vanilla_cnn};
pub use forward::{
    accuracy, forward, forward_recorded, forward_train, grad, grad_train, loss, predictions,
    softmax_cross_entropy,
};
pub use init::init_params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution geometry: channels, filter size, stride, zero-padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

/// One layer of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Dense {
        input: usize,
        output: usize,
        /// When present, the flat output is viewed as (C,H,W) downstream.
        /// Product must equal `output`. Used by embedded conv layers.
        output_shape: Option<(usize, usize, usize)>,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f32,
    },
    Flatten,
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { d: usize },
}

impl LayerShape {
    pub fn volume(&self) -> usize {
        match *self {
            LayerShape::Spatial { c, h, w } => c * h * w,
            LayerShape::Flat { d } => d,
        }
    }
}

/// A full model: input shape (C,H,W), layer list, class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// Output spatial extent of a convolution: (d_in + 2p − k)/s + 1.
pub fn conv_output_dim(d_in: usize, spec: &ConvSpec) -> Result<usize> {
    let span = d_in as i64 + 2 * spec.p as i64 - spec.k as i64;
    if spec.k < 1 || spec.s < 1 {
        return Err(Error::InvalidArgument(format!(
            "conv needs k ≥ 1 and s ≥ 1, got k={}, s={}",
            spec.k, spec.s
        )));
    }
    if span < 0 || span % spec.s as i64 != 0 {
        return Err(Error::InvalidArgument(format!(
            "conv geometry (d_in={}, k={}, s={}, p={}) does not produce an integer output size",
            d_in, spec.k, spec.s, spec.p
        )));
    }
    Ok((span / spec.s as i64) as usize + 1)
}

/// Output extent of a pooling pass: (d_in − window)/stride + 1.
pub fn pool_output_dim(d_in: usize, window: usize, stride: usize) -> Result<usize> {
    if window < 1 || stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "pool needs window ≥ 1 and stride ≥ 1, got window={window}, stride={stride}"
        )));
    }
    if d_in < window || (d_in - window) % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "pool geometry (d_in={d_in}, window={window}, stride={stride}) does not tile the input"
        )));
    }
    Ok((d_in - window) / stride + 1)
}

impl ModelSpec {
    /// Check that shapes chain consistently and return the shape after each
    /// layer (`result[i]` = output of layer `i`). The last shape must be a
    /// flat vector of length `classes`.
    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        let geo = |layer: usize, op: &'static str, e: Error| match e {
            Error::InvalidArgument(message) => Error::LayerGeometry { layer, op, message },
            other => other,
        };
        let (c0, h0, w0) = self.input;
        let mut shape = LayerShape::Spatial {
            c: c0,
            h: h0,
            w: w0,
        };
        let mut chain = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv(spec) => match shape {
                    LayerShape::Spatial { c, h, w } if c == spec.c_in => LayerShape::Spatial {
                        c: spec.c_out,
                        h: conv_output_dim(h, spec).map_err(|e| geo(i, "conv", e))?,
                        w: conv_output_dim(w, spec).map_err(|e| geo(i, "conv", e))?,
                    },
                    other => {
                        return Err(Error::shape(
                            format!("layer {i} (conv)"),
                            format!("spatial input with {} channels", spec.c_in),
                            format!("{other:?}"),
                        ))
                    }
                },
                LayerSpec::Dense {
                    input,
                    output,
                    output_shape,
                } => {
                    if shape.volume() != *input {
                        return Err(Error::shape(
                            format!("layer {i} (dense)"),
                            format!("input volume {input}"),
                            format!("{shape:?}"),
                        ));
                    }
                    match output_shape {
                        Some((c, h, w)) => {
                            if c * h * w != *output {
                                return Err(Error::LayerGeometry {
                                    layer: i,
                                    op: "dense",
                                    message: format!(
                                        "output_shape {:?} has volume {}, layer output is {}",
                                        (c, h, w),
                                        c * h * w,
                                        output
                                    ),
                                });
                            }
                            LayerShape::Spatial {
                                c: *c,
                                h: *h,
                                w: *w,
                            }
                        }
                        None => LayerShape::Flat { d: *output },
                    }
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } => shape,
                LayerSpec::MaxPool { window, stride } => match shape {
                    LayerShape::Spatial { c, h, w } => LayerShape::Spatial {
                        c,
                        h: pool_output_dim(h, *window, *stride)
                            .map_err(|e| geo(i, "maxpool", e))?,
                        w: pool_output_dim(w, *window, *stride)
                            .map_err(|e| geo(i, "maxpool", e))?,
                    },
                    other => {
                        return Err(Error::shape(
                            format!("layer {i} (maxpool)"),
                            "spatial input".to_string(),
                            format!("{other:?}"),
                        ))
                    }
                },
                LayerSpec::Flatten => LayerShape::Flat {
                    d: shape.volume(),
                },
            };
            chain.push(shape);
        }
        match chain.last() {
            Some(LayerShape::Flat { d }) if *d == self.classes => Ok(chain),
            other => Err(Error::shape(
                "model output",
                format!("flat logits of length {}", self.classes),
                format!("{other:?}"),
            )),
        }
    }

    /// Total parameter count (m for a CNN, M for its eFCN).
    pub fn param_count(&self) -> usize {
        crate::params::ParamLayout::of(self).total()
    }

    pub fn input_volume(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }
}
