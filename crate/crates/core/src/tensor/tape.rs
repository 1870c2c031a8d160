//! Forward-pass recording for reverse-mode differentiation.
//!
//! The engine's models are straight-line layer sequences, so the tape is a
//! list of nodes in execution order, one per parameterized or nonlinear
//! layer, each holding exactly the state its backward rule needs (the conv
//! input, the relu output for masking, the pool argmax, the dropout mask).
//! Backward walks the list once in reverse with a single rolling adjoint
//! buffer; a node that never ran contributes nothing, which is the "adjoint
//! of an unused node is zero" contract.

use crate::tensor::Tensor;

/// State saved by one layer during a recorded forward pass.
#[derive(Clone, Debug)]
pub enum SavedState {
    /// Input activation (N,C,H,W); backward re-lowers it with im2col.
    Conv { input: Tensor },
    /// Input viewed as (N, in_dim).
    Dense { input: Tensor },
    /// Output activation; the backward mask is `output > 0`, which encodes
    /// the convention that the derivative at exactly 0 is 0.
    Relu { output: Tensor },
    /// Per output element: flat index of the chosen input inside its (H,W)
    /// plane. Ties were broken toward the lowest flat index.
    MaxPool { argmax: Vec<u32> },
    /// Inverted-dropout keep mask (0 or 1/(1−rate)).
    Dropout { mask: Vec<f32> },
    /// Pure shape change; the static shape chain drives the backward view.
    Flatten,
}

/// One recorded node: which layer ran, and what it saved.
#[derive(Clone, Debug)]
pub struct TapeNode {
    pub layer: usize,
    pub saved: SavedState,
}

/// Execution-order record of one forward pass.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<TapeNode>,
}

impl GradTape {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn push(&mut self, layer: usize, saved: SavedState) {
        self.nodes.push(TapeNode { layer, saved });
    }

    /// Nodes in execution order; callers iterate `.rev()` for backward.
    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_keep_execution_order() {
        let mut tape = GradTape::new();
        tape.push(0, SavedState::Flatten);
        tape.push(2, SavedState::Dropout { mask: vec![1.0] });
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.nodes()[0].layer, 0);
        assert_eq!(tape.nodes()[1].layer, 2);
        tape.clear();
        assert!(tape.is_empty());
    }
}
