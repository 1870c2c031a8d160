//! Dense tensors and differentiation utilities.
//!
//! [`Tensor`] is a shape + flat `f32` buffer in row-major order; image
//! batches use (N, C, H, W). The submodules hold the pieces that make
//! gradients work: [`kernels`] has the hot inner loops with fixed reduction
//! order, [`tape`] records forward passes for reverse-mode replay, and
//! [`diff`] exposes `grad` / `finite_diff_grad` / `hvp`.

pub mod diff;
pub mod kernels;
pub mod tape;

pub use diff::{
    finite_diff_grad, finite_diff_grad_of, grad, hvp, hvp_of, hvp_with_eps, ModelObjective,
    Objective, DEFAULT_HVP_EPS0,
};
pub use tape::GradTape;

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build from a shape and matching flat data.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for shape {:?}", expected, shape),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of equal volume. Row-major
    /// layout means this never moves data.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("volume {}", self.data.len()),
                format!("shape {:?} (volume {})", shape, n),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Error if any value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}
