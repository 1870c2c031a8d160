//! Model constructors: the three-block CNN and its end-to-end dense twin.

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, LayerShape, LayerSpec, ModelSpec};

/// Three blocks of Conv(k=3, s=1, p=1) + ReLU + MaxPool(2,2), all convs with
/// `channels` output channels, then Flatten and a single Dense head to
/// `classes`. Padding keeps the spatial size fixed before each pool, so the
/// image sides must be divisible by 8.
pub fn build_vanilla_cnn(
    channels: usize,
    input: (usize, usize, usize),
    classes: usize,
) -> Result<ModelSpec> {
    let (c, h, w) = input;
    if channels == 0 || c == 0 || classes == 0 {
        return Err(Error::InvalidArgument(
            "channels, input channels, and classes must be positive".into(),
        ));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "image sides must be divisible by 8 for three 2×2 pools, got {h}×{w}"
        )));
    }
    let mut layers = Vec::new();
    let mut c_in = c;
    for _ in 0..3 {
        layers.push(LayerSpec::Conv(ConvSpec {
            c_in,
            c_out: channels,
            k: 3,
            s: 1,
            p: 1,
        }));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        c_in = channels;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        input: channels * (h / 8) * (w / 8),
        output: classes,
        output_shape: None,
    });
    let model = ModelSpec {
        input,
        layers,
        classes,
    };
    model.validate()?;
    Ok(model)
}

/// Replace every convolution with a dense layer over the same flattened
/// activations: Conv(c_in → c_out) acting on (c_in, d, d) becomes
/// Dense(c_in·d², c_out·d_out²) whose output is viewed as (c_out, d_out,
/// d_out). Everything else is kept verbatim; a model without convolutions
/// comes back unchanged. The result is the ambient space of the embedding.
pub fn build_fcn_from(cnn: &ModelSpec) -> Result<ModelSpec> {
    let chain = cnn.validate()?;
    let mut layers = Vec::with_capacity(cnn.layers.len());
    for (i, layer) in cnn.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(spec) => {
                let before = if i == 0 {
                    let (c, h, w) = cnn.input;
                    LayerShape::Spatial { c, h, w }
                } else {
                    chain[i - 1]
                };
                let (LayerShape::Spatial { c, h, w }, LayerShape::Spatial { c: oc, h: oh, w: ow }) =
                    (before, chain[i])
                else {
                    unreachable!("validate() admits conv only between spatial shapes");
                };
                debug_assert_eq!(c, spec.c_in);
                layers.push(LayerSpec::Dense {
                    input: c * h * w,
                    output: oc * oh * ow,
                    output_shape: Some((oc, oh, ow)),
                });
            }
            other => layers.push(other.clone()),
        }
    }
    let fcn = ModelSpec {
        input: cnn.input,
        layers,
        classes: cnn.classes,
    };
    fcn.validate()?;
    Ok(fcn)
}
