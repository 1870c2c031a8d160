//! Parameter initialization.

use std::sync::Arc;

use crate::error::Result;
use crate::nn::{LayerSpec, ModelSpec};
use crate::params::{ParamLayout, ParamVector};
use crate::rng::{stream, DetRng};

/// Draw every weight and bias i.i.d. uniform on (−1/√fan_in, +1/√fan_in),
/// where fan_in is c_in·k² for a convolution and the input width for a dense
/// layer. Draws happen in layer order, weights before bias, from the INIT
/// stream of `seed` — so equal (model, seed) pairs give bitwise-equal θ.
pub fn init_params(model: &ModelSpec, seed: u64) -> Result<ParamVector> {
    model.validate()?;
    let layout = Arc::new(ParamLayout::of(model));
    let mut theta = ParamVector::zeros(layout.clone());
    let mut rng = DetRng::new(seed, stream::INIT, 0);
    for (i, layer) in model.layers.iter().enumerate() {
        let fan_in = match layer {
            LayerSpec::Conv(c) => c.c_in * c.k * c.k,
            LayerSpec::Dense { input, .. } => *input,
            _ => continue,
        };
        let bound = 1.0 / (fan_in as f32).sqrt();
        for kind in [crate::params::ParamKind::Weight, crate::params::ParamKind::Bias] {
            let seg = layout.segment(i, kind).expect("parameterized layer").clone();
            for v in theta.slice_mut(&seg) {
                *v = rng.uniform_f32(-bound, bound);
            }
        }
    }
    Ok(theta)
}
