//! Flat parameter vectors with per-layer segmentation.
//!
//! All optimizers, probes, and the embedding treat parameters as one flat
//! `f32` array; the [`ParamLayout`] segment table says which stretch belongs
//! to which layer (and whether it is a weight matrix or a bias), so code
//! that cares about structure — the embedding map, the δ measure, masking —
//! can find its slices without reshaping anything.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelSpec};
use crate::tensor::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous stretch of the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Index into `ModelSpec::layers`.
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    /// Logical shape: `[c_out, c_in, k, k]` for conv weights,
    /// `[out, in]` for dense weights (rows are outputs), `[out]` for biases.
    pub shape: Vec<usize>,
}

/// Segment table for one model spec. Segments appear in layer order and
/// partition `[0, total)` exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn of(model: &ModelSpec) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |layer: usize, kind: ParamKind, shape: Vec<usize>, offset: &mut usize| {
            let len: usize = shape.iter().product();
            segments.push(Segment {
                layer,
                kind,
                offset: *offset,
                len,
                shape,
            });
            *offset += len;
        };
        for (i, layer) in model.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv(c) => {
                    push(i, ParamKind::Weight, vec![c.c_out, c.c_in, c.k, c.k], &mut offset);
                    push(i, ParamKind::Bias, vec![c.c_out], &mut offset);
                }
                LayerSpec::Dense { input, output, .. } => {
                    push(i, ParamKind::Weight, vec![*output, *input], &mut offset);
                    push(i, ParamKind::Bias, vec![*output], &mut offset);
                }
                LayerSpec::Relu
                | LayerSpec::MaxPool { .. }
                | LayerSpec::Dropout { .. }
                | LayerSpec::Flatten => {}
            }
        }
        ParamLayout {
            segments,
            total: offset,
        }
    }

    /// Structureless layout: one weight segment covering `len` values. For
    /// synthetic objectives and free-standing vectors in tests and probes.
    pub fn flat(len: usize) -> Self {
        ParamLayout {
            segments: vec![Segment {
                layer: 0,
                kind: ParamKind::Weight,
                offset: 0,
                len,
                shape: vec![len],
            }],
            total: len,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, layer: usize, kind: ParamKind) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.layer == layer && s.kind == kind)
    }
}

/// Flat `f32` parameter vector tied to a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f32>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.total();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f32>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::shape(
                "ParamVector::from_values",
                format!("{} values", layout.total()),
                format!("{} values", values.len()),
            ));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Values of one segment.
    pub fn slice(&self, seg: &Segment) -> &[f32] {
        &self.values[seg.offset..seg.offset + seg.len]
    }

    pub fn slice_mut(&mut self, seg: &Segment) -> &mut [f32] {
        &mut self.values[seg.offset..seg.offset + seg.len]
    }

    /// ‖θ‖₂ with 64-bit accumulation.
    pub fn norm_l2(&self) -> f64 {
        kernels::sum_sq_f64(&self.values).sqrt()
    }

    /// ⟨self, other⟩ with 64-bit accumulation.
    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        kernels::dot_f64(&self.values, &other.values)
    }

    /// self += alpha · other.
    pub fn add_scaled(&mut self, alpha: f32, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        kernels::axpy(alpha, &other.values, &mut self.values);
    }

    /// self *= alpha.
    pub fn scale(&mut self, alpha: f32) {
        kernels::scale(alpha, &mut self.values);
    }

    /// self − other as a new vector.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        ParamVector {
            layout: self.layout.clone(),
            values,
        }
    }

    /// ‖self − other‖₂ without materializing the difference.
    pub fn distance_l2(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let mut acc = 0.0f64;
        for (a, b) in self.values.iter().zip(&other.values) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        acc.sqrt()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvSpec, ModelSpec};

    fn tiny_model() -> ModelSpec {
        ModelSpec {
            input: (1, 4, 4),
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    c_in: 1,
                    c_out: 2,
                    k: 3,
                    s: 1,
                    p: 1,
                }),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 32,
                    output: 5,
                    output_shape: None,
                },
            ],
            classes: 5,
        }
    }

    #[test]
    fn layout_partitions_exactly() {
        let layout = ParamLayout::of(&tiny_model());
        // conv: 2·1·3·3 + 2 = 20; dense: 5·32 + 5 = 165; total 185.
        assert_eq!(layout.total(), 185);
        let mut expect_offset = 0;
        for seg in layout.segments() {
            assert_eq!(seg.offset, expect_offset);
            assert_eq!(seg.len, seg.shape.iter().product::<usize>());
            expect_offset += seg.len;
        }
        assert_eq!(expect_offset, layout.total());
        assert_eq!(
            layout.segment(0, ParamKind::Weight).unwrap().shape,
            vec![2, 1, 3, 3]
        );
        assert_eq!(layout.segment(3, ParamKind::Bias).unwrap().shape, vec![5]);
        assert!(layout.segment(1, ParamKind::Weight).is_none());
    }

    #[test]
    fn vector_math() {
        let layout = Arc::new(ParamLayout::of(&tiny_model()));
        let mut a = ParamVector::zeros(layout.clone());
        let mut b = ParamVector::zeros(layout);
        a.values_mut()[0] = 3.0;
        a.values_mut()[1] = 4.0;
        assert_eq!(a.norm_l2(), 5.0);
        b.values_mut()[0] = 1.0;
        b.values_mut()[1] = 2.0;
        assert_eq!(a.dot(&b), 11.0);
        let d = a.sub(&b);
        assert_eq!(d.values()[0], 2.0);
        assert_eq!(a.distance_l2(&b), (4.0f64 + 4.0).sqrt());
        a.add_scaled(-1.0, &b);
        assert_eq!(a.values()[0], 2.0);
        a.scale(0.5);
        assert_eq!(a.values()[0], 1.0);
    }

    #[test]
    fn from_values_checks_length() {
        let layout = Arc::new(ParamLayout::of(&tiny_model()));
        assert!(ParamVector::from_values(layout.clone(), vec![0.0; 185]).is_ok());
        assert!(ParamVector::from_values(layout, vec![0.0; 184]).is_err());
    }
}
