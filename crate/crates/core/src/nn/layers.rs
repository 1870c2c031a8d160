//! Per-layer forward and backward compute on flat slices.
//!
//! Layout conventions, used everywhere without exception:
//! activations (N, C, H, W) or (N, D) row-major; conv filters
//! (c_out, c_in, k, k); dense weights (out, in) with rows = outputs.
//! Every accumulation runs in a source-fixed order, so results are
//! reproducible bit-for-bit; loops are blocked only in ways that keep each
//! destination's accumulation order unchanged.

use crate::rng::DetRng;
use crate::tensor::kernels::{axpy, col2im_add, dot, im2col, ConvGeom};

/// Cache-block edge for the dense kernels: tiles of 32 rows keep one weight
/// row resident while it serves 32 samples (and vice versa).
const BLOCK: usize = 32;

/// y[n,o] = ⟨w[o,:], x[n,:]⟩ + b[o] over the batch.
pub(crate) fn dense_forward(
    x: &[f32],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[f32],
    b: &[f32],
    y: &mut [f32],
) {
    debug_assert_eq!(x.len(), n * in_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(y.len(), n * out_dim);
    for nb in (0..n).step_by(BLOCK) {
        let n_end = (nb + BLOCK).min(n);
        for ob in (0..out_dim).step_by(BLOCK) {
            let o_end = (ob + BLOCK).min(out_dim);
            for o in ob..o_end {
                let wrow = &w[o * in_dim..][..in_dim];
                for i in nb..n_end {
                    y[i * out_dim + o] = dot(wrow, &x[i * in_dim..][..in_dim]) + b[o];
                }
            }
        }
    }
}

/// Parameter and input gradients of the dense layer. `dx` may be empty when
/// the input gradient is not needed (first layer). Accumulation order per
/// destination is ascending in the summed index, independent of blocking.
pub(crate) fn dense_backward(
    x: &[f32],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    debug_assert_eq!(dy.len(), n * out_dim);
    debug_assert_eq!(dw.len(), out_dim * in_dim);
    debug_assert_eq!(db.len(), out_dim);
    // dw[o,:] = Σ_i dy[i,o]·x[i,:] ; db[o] = Σ_i dy[i,o]
    for ob in (0..out_dim).step_by(BLOCK) {
        let o_end = (ob + BLOCK).min(out_dim);
        for i in 0..n {
            let xrow = &x[i * in_dim..][..in_dim];
            for o in ob..o_end {
                let g = dy[i * out_dim + o];
                if g != 0.0 {
                    axpy(g, xrow, &mut dw[o * in_dim..][..in_dim]);
                }
                db[o] += g;
            }
        }
    }
    if dx.is_empty() {
        return;
    }
    debug_assert_eq!(dx.len(), n * in_dim);
    // dx[i,:] = Σ_o dy[i,o]·w[o,:]
    for nb in (0..n).step_by(BLOCK) {
        let n_end = (nb + BLOCK).min(n);
        for o in 0..out_dim {
            let wrow = &w[o * in_dim..][..in_dim];
            for i in nb..n_end {
                let g = dy[i * out_dim + o];
                if g != 0.0 {
                    axpy(g, wrow, &mut dx[i * in_dim..][..in_dim]);
                }
            }
        }
    }
}

/// Convolution forward for a batch: per sample, lower to a patch matrix and
/// take dot products against filter rows. `col` is scratch of size
/// `geom.positions() * geom.patch()`.
pub(crate) fn conv_forward(
    x: &[f32],
    n: usize,
    geom: &ConvGeom,
    c_out: usize,
    w: &[f32],
    b: &[f32],
    col: &mut [f32],
    y: &mut [f32],
) {
    let in_vol = geom.c_in * geom.h * geom.w;
    let pos = geom.positions();
    let patch = geom.patch();
    debug_assert_eq!(x.len(), n * in_vol);
    debug_assert_eq!(w.len(), c_out * patch);
    debug_assert_eq!(y.len(), n * c_out * pos);
    for i in 0..n {
        im2col(&x[i * in_vol..][..in_vol], geom, col);
        let yi = &mut y[i * c_out * pos..][..c_out * pos];
        for oc in 0..c_out {
            let wrow = &w[oc * patch..][..patch];
            let bias = b[oc];
            let plane = &mut yi[oc * pos..][..pos];
            for (p, out) in plane.iter_mut().enumerate() {
                *out = dot(wrow, &col[p * patch..][..patch]) + bias;
            }
        }
    }
}

/// Convolution backward. Recomputes the patch matrix from the saved input
/// (cheaper than keeping it alive). `dx` may be empty for the first layer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f32],
    n: usize,
    geom: &ConvGeom,
    c_out: usize,
    w: &[f32],
    dy: &[f32],
    col: &mut [f32],
    dcol: &mut [f32],
    dw: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    let in_vol = geom.c_in * geom.h * geom.w;
    let pos = geom.positions();
    let patch = geom.patch();
    debug_assert_eq!(dy.len(), n * c_out * pos);
    let need_dx = !dx.is_empty();
    for i in 0..n {
        im2col(&x[i * in_vol..][..in_vol], geom, col);
        let dyi = &dy[i * c_out * pos..][..c_out * pos];
        if need_dx {
            dcol.fill(0.0);
        }
        for oc in 0..c_out {
            let wrow = &w[oc * patch..][..patch];
            let dwrow = &mut dw[oc * patch..][..patch];
            let dplane = &dyi[oc * pos..][..pos];
            let mut bias_sum = 0.0f32;
            for (p, &g) in dplane.iter().enumerate() {
                bias_sum += g;
                if g == 0.0 {
                    continue;
                }
                axpy(g, &col[p * patch..][..patch], dwrow);
                if need_dx {
                    axpy(g, wrow, &mut dcol[p * patch..][..patch]);
                }
            }
            db[oc] += bias_sum;
        }
        if need_dx {
            col2im_add(dcol, geom, &mut dx[i * in_vol..][..in_vol]);
        }
    }
}

/// In-place max(x, 0).
pub(crate) fn relu_forward(x: &mut [f32]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// dy masked by the saved output: zero wherever the output was ≤ 0. Since
/// relu_forward maps 0 to 0, this makes the derivative at exactly 0 equal 0.
pub(crate) fn relu_backward(y: &[f32], dy: &mut [f32]) {
    for (d, out) in dy.iter_mut().zip(y) {
        if *out <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Max pooling over (N,C,H,W). Windows are scanned in row-major order with a
/// strict comparison, so ties resolve to the lowest flat index. `argmax`
/// records, per output element, the winner's flat index inside its (H,W)
/// plane.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool_forward(
    x: &[f32],
    planes: usize, // N·C
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    y: &mut [f32],
    argmax: &mut [u32],
) {
    debug_assert_eq!(x.len(), planes * h * w);
    debug_assert_eq!(y.len(), planes * oh * ow);
    debug_assert_eq!(argmax.len(), y.len());
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        let dst = &mut y[pl * oh * ow..][..oh * ow];
        let arg = &mut argmax[pl * oh * ow..][..oh * ow];
        for po in 0..oh {
            for qo in 0..ow {
                let (i0, j0) = (po * stride, qo * stride);
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0u32;
                for u in 0..window {
                    let row = (i0 + u) * w + j0;
                    for v in 0..window {
                        let val = src[row + v];
                        if val > best {
                            best = val;
                            best_idx = (row + v) as u32;
                        }
                    }
                }
                dst[po * ow + qo] = best;
                arg[po * ow + qo] = best_idx;
            }
        }
    }
}

/// Scatter-add pooled gradients back to the winners. Output positions are
/// visited in order, so overlapping windows accumulate deterministically.
pub(crate) fn maxpool_backward(
    argmax: &[u32],
    dy: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    out_plane: usize, // oh·ow
    dx: &mut [f32],
) {
    debug_assert_eq!(dy.len(), planes * out_plane);
    debug_assert_eq!(dx.len(), planes * h * w);
    for pl in 0..planes {
        let dst = &mut dx[pl * h * w..][..h * w];
        let grad = &dy[pl * out_plane..][..out_plane];
        let arg = &argmax[pl * out_plane..][..out_plane];
        for (g, idx) in grad.iter().zip(arg) {
            dst[*idx as usize] += *g;
        }
    }
}

/// Inverted dropout: keep with probability 1−rate and scale kept values by
/// 1/(1−rate), so eval needs no correction. Draws one uniform per element in
/// flat order. Caller skips the layer entirely when rate == 0.
pub(crate) fn dropout_forward_train(
    x: &mut [f32],
    rate: f32,
    rng: &mut DetRng,
    mask: &mut Vec<f32>,
) {
    debug_assert!(rate > 0.0 && rate < 1.0);
    let keep_scale = 1.0 / (1.0 - rate);
    mask.clear();
    mask.reserve(x.len());
    for v in x.iter_mut() {
        let m = if rng.uniform_f32(0.0, 1.0) < rate {
            0.0
        } else {
            keep_scale
        };
        mask.push(m);
        *v *= m;
    }
}

/// dy masked by the saved dropout mask.
pub(crate) fn dropout_backward(mask: &[f32], dy: &mut [f32]) {
    for (d, m) in dy.iter_mut().zip(mask) {
        *d *= *m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, DetRng};

    #[test]
    fn dense_forward_identity() {
        // 3×3 identity weight: y = x + b
        let x = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut w = [0.0f32; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let b = [10.0f32, 20.0, 30.0];
        let mut y = [0.0f32; 6];
        dense_forward(&x, 2, 3, 3, &w, &b, &mut y);
        assert_eq!(y, [11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn dense_blocked_matches_naive() {
        let (n, in_dim, out_dim) = (37, 45, 51); // awkward sizes straddle the block edge
        let x: Vec<f32> = (0..n * in_dim).map(|i| ((i * 7 % 23) as f32 - 11.0) / 11.0).collect();
        let w: Vec<f32> = (0..out_dim * in_dim).map(|i| ((i * 13 % 19) as f32 - 9.0) / 9.0).collect();
        let b: Vec<f32> = (0..out_dim).map(|i| i as f32 * 0.01).collect();
        let mut y = vec![0.0f32; n * out_dim];
        dense_forward(&x, n, in_dim, out_dim, &w, &b, &mut y);
        for i in [0usize, 5, 36] {
            for o in [0usize, 31, 32, 50] {
                let want: f64 = (0..in_dim)
                    .map(|j| w[o * in_dim + j] as f64 * x[i * in_dim + j] as f64)
                    .sum::<f64>()
                    + b[o] as f64;
                let got = y[i * out_dim + o] as f64;
                assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn maxpool_tie_breaks_to_lowest_flat_index() {
        // 2×2 plane of equal values: winner must be index 0.
        let x = [7.0f32, 7.0, 7.0, 7.0];
        let mut y = [0.0f32; 1];
        let mut arg = [99u32; 1];
        maxpool_forward(&x, 1, 2, 2, 2, 2, 1, 1, &mut y, &mut arg);
        assert_eq!(y[0], 7.0);
        assert_eq!(arg[0], 0);
    }

    #[test]
    fn maxpool_forward_backward_roundtrip() {
        // 4×4 plane, 2×2 window stride 2; place distinct maxima.
        #[rustfmt::skip]
        let x = [
            1.0f32, 2.0, 0.0, 0.0,
            3.0,    4.0, 0.0, 5.0,
            0.0,    0.0, 9.0, 8.0,
            6.0,    0.0, 7.0, 0.0,
        ];
        let mut y = [0.0f32; 4];
        let mut arg = [0u32; 4];
        maxpool_forward(&x, 1, 4, 4, 2, 2, 2, 2, &mut y, &mut arg);
        assert_eq!(y, [4.0, 5.0, 6.0, 9.0]);
        let dy = [1.0f32, 2.0, 3.0, 4.0];
        let mut dx = [0.0f32; 16];
        maxpool_backward(&arg, &dy, 1, 4, 4, 4, &mut dx);
        assert_eq!(dx[5], 1.0); // 4.0 lives at (1,1)
        assert_eq!(dx[7], 2.0); // 5.0 at (1,3)
        assert_eq!(dx[12], 3.0); // 6.0 at (3,0)
        assert_eq!(dx[10], 4.0); // 9.0 at (2,2)
        assert_eq!(dx.iter().sum::<f32>(), 10.0);
    }

    #[test]
    fn relu_zero_maps_to_zero_gradient() {
        let mut x = [-1.0f32, 0.0, 2.0];
        relu_forward(&mut x);
        assert_eq!(x, [0.0, 0.0, 2.0]);
        let mut dy = [5.0f32, 5.0, 5.0];
        relu_backward(&x, &mut dy);
        assert_eq!(dy, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn dropout_scales_kept_values() {
        let mut rng = DetRng::new(11, stream::DROPOUT, 0);
        let mut x = vec![1.0f32; 10_000];
        let mut mask = Vec::new();
        dropout_forward_train(&mut x, 0.25, &mut rng, &mut mask);
        let kept = x.iter().filter(|v| **v != 0.0).count();
        // Binomial(10000, 0.75): 4σ ≈ 173.
        assert!((kept as f64 - 7500.0).abs() < 200.0, "kept {kept}");
        for v in &x {
            assert!(*v == 0.0 || (*v - 4.0 / 3.0).abs() < 1e-6);
        }
        // backward applies the same mask
        let mut dy = vec![3.0f32; 10_000];
        dropout_backward(&mask, &mut dy);
        for (d, v) in dy.iter().zip(&x) {
            assert_eq!(*d == 0.0, *v == 0.0);
        }
    }
}
