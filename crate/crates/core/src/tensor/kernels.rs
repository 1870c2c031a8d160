//! Hot inner loops with fixed reduction order.
//!
//! Everything here is written so the compiler may vectorize freely without
//! changing results: partial sums live in a fixed number of independent
//! lanes, the collapse tree is spelled out, and no operation relies on
//! floating-point reassociation or FMA contraction. The same inputs produce
//! the same bits on any target.

/// Number of independent accumulator lanes in dot products. Sixteen f32
/// lanes map onto one AVX-512 register or two AVX2 registers; the choice is
/// part of the numeric contract (changing it changes rounding).
const LANES: usize = 16;

/// f32 dot product with `LANES` partial sums and a fixed collapse tree.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for j in 0..LANES {
            // mul_add is IEEE fusedMultiplyAdd: one rounding, same bits on
            // every target, and it reaches the FMA units.
            lanes[j] = xa[j].mul_add(xb[j], lanes[j]);
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ta.iter().zip(tb) {
        tail = x.mul_add(*y, tail);
    }
    collapse_f32(&lanes) + tail
}

/// f64-accumulated dot of f32 slices. Each product is exact (24-bit
/// mantissas fit in f64), only the summation rounds.
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for j in 0..8 {
            // f32→f64 products are exact, so the fused form changes no bits.
            lanes[j] = (xa[j] as f64).mul_add(xb[j] as f64, lanes[j]);
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ta.iter().zip(tb) {
        tail = (*x as f64).mul_add(*y as f64, tail);
    }
    collapse_f64(&lanes) + tail
}

/// Σ x_i² in f64.
pub fn sum_sq_f64(x: &[f32]) -> f64 {
    dot_f64(x, x)
}

/// Σ x_i in f64.
pub fn sum_f64(x: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let cx = x.chunks_exact(8);
    let tx = cx.remainder();
    for c in cx {
        for j in 0..8 {
            lanes[j] += c[j] as f64;
        }
    }
    let mut tail = 0.0f64;
    for v in tx {
        tail += *v as f64;
    }
    collapse_f64(&lanes) + tail
}

fn collapse_f32(l: &[f32; LANES]) -> f32 {
    let mut s = [0.0f32; LANES / 2];
    for j in 0..LANES / 2 {
        s[j] = l[j] + l[j + LANES / 2];
    }
    let q0 = (s[0] + s[4]) + (s[2] + s[6]);
    let q1 = (s[1] + s[5]) + (s[3] + s[7]);
    q0 + q1
}

fn collapse_f64(l: &[f64; 8]) -> f64 {
    ((l[0] + l[4]) + (l[2] + l[6])) + ((l[1] + l[5]) + (l[3] + l[7]))
}

/// y += alpha · x, elementwise.
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = alpha.mul_add(*xi, *yi);
    }
}

/// x *= alpha, elementwise.
pub fn scale(alpha: f32, x: &mut [f32]) {
    for v in x {
        *v *= alpha;
    }
}

/// Convolution geometry for one spatial pass, shared by im2col and col2im.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Patch length: one row of the column matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
    /// Number of output positions: rows of the column matrix.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Lower one sample (C,H,W) to a patch matrix laid out `[positions, patch]`,
/// so the convolution becomes `out[oc][pos] = dot(w[oc], col[pos])` over two
/// contiguous slices. Padding taps are written as zeros. Patch-internal
/// order (c, u, v) matches the filter layout (c_out, c_in, u, v).
pub fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    debug_assert_eq!(x.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(col.len(), g.positions() * g.patch());
    let (k, patch) = (g.k, g.patch());
    for io in 0..g.out_h {
        for jo in 0..g.out_w {
            let row = &mut col[(io * g.out_w + jo) * patch..][..patch];
            let j0 = (jo * g.s) as isize - g.p as isize;
            // Valid v-range for this jo, identical across rows u and channels.
            let v_lo = (-j0).clamp(0, k as isize) as usize;
            let v_hi = ((g.w as isize - j0).clamp(0, k as isize)) as usize;
            for c in 0..g.c_in {
                let plane = &x[c * g.h * g.w..][..g.h * g.w];
                for u in 0..k {
                    let dst = &mut row[c * k * k + u * k..][..k];
                    let i_in = (io * g.s + u) as isize - g.p as isize;
                    if i_in < 0 || i_in >= g.h as isize || v_lo >= v_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    dst[..v_lo].fill(0.0);
                    let src = i_in as usize * g.w + (j0 + v_lo as isize) as usize;
                    dst[v_lo..v_hi].copy_from_slice(&plane[src..src + (v_hi - v_lo)]);
                    dst[v_hi..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch-matrix gradient back onto the
/// input gradient. Iteration order is fixed (position-major), so overlapping
/// taps always accumulate in the same order.
pub fn col2im_add(dcol: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    debug_assert_eq!(dx.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(dcol.len(), g.positions() * g.patch());
    let (k, patch) = (g.k, g.patch());
    for io in 0..g.out_h {
        for jo in 0..g.out_w {
            let row = &dcol[(io * g.out_w + jo) * patch..][..patch];
            let j0 = (jo * g.s) as isize - g.p as isize;
            let v_lo = (-j0).clamp(0, k as isize) as usize;
            let v_hi = ((g.w as isize - j0).clamp(0, k as isize)) as usize;
            for c in 0..g.c_in {
                let plane = &mut dx[c * g.h * g.w..][..g.h * g.w];
                for u in 0..k {
                    let i_in = (io * g.s + u) as isize - g.p as isize;
                    if i_in < 0 || i_in >= g.h as isize || v_lo >= v_hi {
                        continue;
                    }
                    let src = &row[c * k * k + u * k + v_lo..][..v_hi - v_lo];
                    let base = i_in as usize * g.w + (j0 + v_lo as isize) as usize;
                    for (d, s) in plane[base..base + src.len()].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dot_f64(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn dot_matches_f64_reference() {
        let n = 1003; // odd length exercises the tail path
        let a: Vec<f32> = (0..n).map(|i| ((i * 37 % 101) as f32 - 50.0) / 50.0).collect();
        let b: Vec<f32> = (0..n).map(|i| ((i * 53 % 89) as f32 - 44.0) / 44.0).collect();
        let got = dot(&a, &b) as f64;
        let want = naive_dot_f64(&a, &b);
        assert!((got - want).abs() <= 1e-3 * want.abs().max(1.0));
        assert!((dot_f64(&a, &b) - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn sum_sq_is_exact_on_integers() {
        let x: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        // Σ i² for 1..=100 = 338350, exactly representable.
        assert_eq!(sum_sq_f64(&x), 338350.0);
        assert_eq!(sum_f64(&x), 5050.0);
    }

    #[test]
    fn axpy_and_scale() {
        let x = vec![1.0f32, 2.0, 3.0];
        let mut y = vec![10.0f32, 20.0, 30.0];
        axpy(2.0, &x, &mut y);
        assert_eq!(y, vec![12.0, 24.0, 36.0]);
        scale(0.5, &mut y);
        assert_eq!(y, vec![6.0, 12.0, 18.0]);
    }

    /// Direct indexing oracle for im2col.
    fn im2col_oracle(x: &[f32], g: &ConvGeom) -> Vec<f32> {
        let mut col = vec![0.0f32; g.positions() * g.patch()];
        for io in 0..g.out_h {
            for jo in 0..g.out_w {
                for c in 0..g.c_in {
                    for u in 0..g.k {
                        for v in 0..g.k {
                            let i = (io * g.s + u) as isize - g.p as isize;
                            let j = (jo * g.s + v) as isize - g.p as isize;
                            let val = if i >= 0 && i < g.h as isize && j >= 0 && j < g.w as isize
                            {
                                x[c * g.h * g.w + i as usize * g.w + j as usize]
                            } else {
                                0.0
                            };
                            col[(io * g.out_w + jo) * g.patch()
                                + c * g.k * g.k
                                + u * g.k
                                + v] = val;
                        }
                    }
                }
            }
        }
        col
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        for (h, w, k, s, p) in [(5, 5, 3, 1, 1), (6, 4, 3, 1, 0), (8, 8, 2, 2, 0), (5, 5, 5, 1, 2)]
        {
            let g = ConvGeom {
                c_in: 3,
                h,
                w,
                k,
                s,
                p,
                out_h: (h + 2 * p - k) / s + 1,
                out_w: (w + 2 * p - k) / s + 1,
            };
            let x: Vec<f32> = (0..g.c_in * h * w).map(|i| i as f32 * 0.1 - 2.0).collect();
            let mut col = vec![f32::NAN; g.positions() * g.patch()];
            im2col(&x, &g, &mut col);
            assert_eq!(col, im2col_oracle(&x, &g), "geometry {:?}", (h, w, k, s, p));
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            c_in: 2,
            h: 6,
            w: 5,
            k: 3,
            s: 1,
            p: 1,
            out_h: 6,
            out_w: 5,
        };
        let x: Vec<f32> = (0..g.c_in * g.h * g.w).map(|i| (i as f32).sin()).collect();
        let c: Vec<f32> = (0..g.positions() * g.patch()).map(|i| (i as f32).cos()).collect();
        let mut col = vec![0.0f32; c.len()];
        im2col(&x, &g, &mut col);
        let mut xt = vec![0.0f32; x.len()];
        col2im_add(&c, &g, &mut xt);
        // ⟨im2col(x), c⟩ = ⟨x, col2im(c)⟩ up to f64 rounding of the two sums.
        let lhs = dot_f64(&col, &c);
        let rhs = dot_f64(&x, &xt);
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0));
    }
}
