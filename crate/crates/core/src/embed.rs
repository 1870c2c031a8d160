//! The linear map Φ from convolutional parameters into the parameters of an
//! equivalent dense network, together with everything the map induces: the
//! tie structure (which dense entries share one conv weight), the local /
//! off-local mask, the gradient pullback Φᵀ, the deviation ratio δ, and
//! analytic entry counts for architectures too large to materialize.
//!
//! Conventions. Dense weights are `[out, in]` row-major. Activations flatten
//! channel-major: `flat(c, i, j) = c·H·W + i·W + j`. For a conv layer with
//! stride `s` and padding `p`, the dense entry at row `(c_out, i_o, j_o)`,
//! column `(c_in, i_in, j_in)` equals `filter[c_out, c_in, u, v]` with
//! `u = i_in − (i_o·s − p)` and `v = j_in − (j_o·s − p)` whenever `0 ≤ u, v <
//! k` and the input position is in bounds, and 0 otherwise. Padding-clipped
//! taps produce no dense entry; those positions are off-local (trainable,
//! zero right after embedding). Conv biases are replicated across output
//! positions, so every bias entry is local; layers that were already dense
//! are copied verbatim and count as local too.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{build_fcn_from, ConvSpec, LayerShape, LayerSpec, ModelSpec};
use crate::params::{ParamKind, ParamLayout, ParamVector};

/// Ceiling on the memory `embed` may allocate eagerly (dense parameter
/// vector, mask, tie tables). Dense size is quadratic in spatial extent, so
/// this guard turns an accidental full-resolution embed into an error that
/// reports the required footprint instead of an OOM kill.
pub const DEFAULT_EMBED_BUDGET_BYTES: u64 = 2 * 1024 * 1024 * 1024;

/// Which side of the local / off-local split `mask_apply` keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keep {
    Local,
    OffLocal,
}

/// Boolean vector over a parameter layout; `true` marks local entries.
#[derive(Clone, Debug)]
pub struct Mask {
    layout: Arc<ParamLayout>,
    values: Vec<bool>,
}

impl Mask {
    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count_true(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }
}

/// Tie tables for one embedded (conv → dense) layer. Indices are flat
/// offsets *within* the corresponding dense segment, stored in ascending
/// order so every reduction over them is deterministic.
#[derive(Clone, Debug)]
struct LayerTies {
    /// Index into `ModelSpec::layers` (same in both specs).
    layer: usize,
    /// Dense input width, for recovering (row, col) from a flat offset.
    cols: usize,
    /// Conv weight index `(c_out, c_in, u, v)` row-major → dense positions.
    weight: Vec<Vec<u32>>,
    /// Conv bias channel → replicated dense bias positions.
    bias: Vec<Vec<u32>>,
}

/// The embedding Φ for one CNN architecture: both specs and layouts, the
/// per-layer tie tables, and the local mask. Immutable after construction.
#[derive(Clone, Debug)]
pub struct EmbeddingMap {
    cnn_spec: ModelSpec,
    fcn_spec: ModelSpec,
    cnn_layout: Arc<ParamLayout>,
    fcn_layout: Arc<ParamLayout>,
    geoms: Vec<EmbedGeom>,
    tied: Vec<LayerTies>,
    mask: Mask,
}

/// Geometry of one embedded conv layer: input extent, filter, and output
/// extent, which together fix the dense matrix's row/column structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedGeom {
    /// Index into `ModelSpec::layers` (same in both specs).
    pub layer: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl EmbedGeom {
    /// Dense output width: one row per (c_out, i_o, j_o).
    pub fn rows(&self) -> usize {
        self.c_out * self.out_h * self.out_w
    }

    /// Dense input width: one column per (c_in, i_in, j_in).
    pub fn cols(&self) -> usize {
        self.c_in * self.h * self.w
    }
}

fn conv_geoms(spec: &ModelSpec) -> Result<Vec<EmbedGeom>> {
    let chain = spec.validate()?;
    let (c0, h0, w0) = spec.input;
    let mut before = LayerShape::Spatial {
        c: c0,
        h: h0,
        w: w0,
    };
    let mut out = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if let LayerSpec::Conv(ConvSpec {
            c_in,
            c_out,
            k,
            s,
            p,
        }) = *layer
        {
            let LayerShape::Spatial { h, w, .. } = before else {
                unreachable!("validate() admits conv only on spatial input");
            };
            let LayerShape::Spatial {
                h: out_h, w: out_w, ..
            } = chain[i]
            else {
                unreachable!("conv output is spatial");
            };
            out.push(EmbedGeom {
                layer: i,
                c_in,
                c_out,
                h,
                w,
                k,
                s,
                p,
                out_h,
                out_w,
            });
        }
        before = chain[i];
    }
    Ok(out)
}

/// Number of in-bounds filter taps along one dimension, summed over output
/// positions: Σ_o |{u : 0 ≤ u < k and 0 ≤ o·s + u − p < d}|.
fn inbounds_taps_1d(out_d: usize, d: usize, k: usize, s: usize, p: usize) -> u64 {
    (0..out_d)
        .map(|o| {
            let lo = (p as i64 - (o * s) as i64).max(0);
            let hi = (k as i64).min(d as i64 + p as i64 - (o * s) as i64);
            (hi - lo).max(0) as u64
        })
        .sum()
}

fn local_weight_entries(g: &EmbedGeom) -> u64 {
    let su = inbounds_taps_1d(g.out_h, g.h, g.k, g.s, g.p);
    let sv = inbounds_taps_1d(g.out_w, g.w, g.k, g.s, g.p);
    g.c_out as u64 * g.c_in as u64 * su * sv
}

/// Local / off-local entry counts over the weight matrices of the dense
/// network a given CNN embeds into, computed from geometry alone. Biases are
/// excluded; weight matrices of layers that were already dense count as
/// local in full.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightCounts {
    pub local: u64,
    pub off_local: u64,
    pub total: u64,
}

pub fn weight_counts(cnn_spec: &ModelSpec) -> Result<WeightCounts> {
    let geoms = conv_geoms(cnn_spec)?;
    let mut local = 0u64;
    let mut total = 0u64;
    for g in &geoms {
        local += local_weight_entries(g);
        total += g.rows() as u64 * g.cols() as u64;
    }
    for layer in &cnn_spec.layers {
        if let LayerSpec::Dense { input, output, .. } = layer {
            let n = *input as u64 * *output as u64;
            local += n;
            total += n;
        }
    }
    Ok(WeightCounts {
        local,
        off_local: total - local,
        total,
    })
}

/// Expected deviation ratio of an i.i.d. zero-mean initialized dense network
/// of the embedded shape: √(off-local entries / total weight entries). At
/// realistic sizes the empirical δ concentrates tightly around this value.
pub fn expected_iid_delta(cnn_spec: &ModelSpec) -> Result<f64> {
    let counts = weight_counts(cnn_spec)?;
    if counts.total == 0 {
        return Err(Error::InvalidArgument(
            "expected_iid_delta: model has no weight matrices".into(),
        ));
    }
    Ok((counts.off_local as f64 / counts.total as f64).sqrt())
}

/// Eager allocation footprint of building the map and embedded parameters:
/// dense parameter vector (4 bytes/entry), mask (1 byte/entry), and tie
/// tables (4 bytes per tied weight or bias position).
fn required_bytes(fcn_total: usize, geoms: &[EmbedGeom]) -> u64 {
    let mut bytes = 5 * fcn_total as u64;
    for g in geoms {
        bytes += 4 * local_weight_entries(g);
        bytes += 4 * g.rows() as u64;
    }
    bytes
}

impl EmbeddingMap {
    /// Build the map for one CNN architecture under the default memory
    /// budget. The parameter scatter itself is a separate step (`embed`),
    /// so protocols can reuse one map across many parameter vectors.
    pub fn build(cnn_spec: &ModelSpec) -> Result<Self> {
        Self::build_with_budget(cnn_spec, DEFAULT_EMBED_BUDGET_BYTES)
    }

    pub fn build_with_budget(cnn_spec: &ModelSpec, budget_bytes: u64) -> Result<Self> {
        let fcn_spec = build_fcn_from(cnn_spec)?;
        let geoms = conv_geoms(cnn_spec)?;
        let cnn_layout = Arc::new(ParamLayout::of(cnn_spec));
        let fcn_layout = Arc::new(ParamLayout::of(&fcn_spec));

        let required = required_bytes(fcn_layout.total(), &geoms);
        if required > budget_bytes {
            return Err(Error::ParamBudget {
                required_bytes: required,
                budget_bytes,
            });
        }

        let mut tied = Vec::with_capacity(geoms.len());
        let mut mask_values = vec![false; fcn_layout.total()];

        for g in &geoms {
            let cols = g.cols();
            if g.rows() * cols > u32::MAX as usize {
                return Err(Error::InvalidArgument(format!(
                    "layer {} dense matrix too large for tie indices",
                    g.layer
                )));
            }
            let mut weight = vec![Vec::new(); g.c_out * g.c_in * g.k * g.k];
            for oc in 0..g.c_out {
                for io in 0..g.out_h {
                    let base_i = (io * g.s) as i64 - g.p as i64;
                    for jo in 0..g.out_w {
                        let base_j = (jo * g.s) as i64 - g.p as i64;
                        let row = (oc * g.out_h + io) * g.out_w + jo;
                        for c in 0..g.c_in {
                            for u in 0..g.k {
                                let i = base_i + u as i64;
                                if i < 0 || i >= g.h as i64 {
                                    continue;
                                }
                                for v in 0..g.k {
                                    let j = base_j + v as i64;
                                    if j < 0 || j >= g.w as i64 {
                                        continue;
                                    }
                                    let col = (c * g.h + i as usize) * g.w + j as usize;
                                    let widx = ((oc * g.c_in + c) * g.k + u) * g.k + v;
                                    weight[widx].push((row * cols + col) as u32);
                                }
                            }
                        }
                    }
                }
            }
            debug_assert_eq!(
                weight.iter().map(|t| t.len() as u64).sum::<u64>(),
                local_weight_entries(g),
                "tie enumeration disagrees with the analytic count"
            );
            let bias: Vec<Vec<u32>> = (0..g.c_out)
                .map(|oc| {
                    let lo = oc * g.out_h * g.out_w;
                    (lo..lo + g.out_h * g.out_w).map(|x| x as u32).collect()
                })
                .collect();

            let wseg = fcn_layout
                .segment(g.layer, ParamKind::Weight)
                .expect("embedded layer has a weight segment");
            for ties in &weight {
                for &f in ties {
                    mask_values[wseg.offset + f as usize] = true;
                }
            }
            tied.push(LayerTies {
                layer: g.layer,
                cols,
                weight,
                bias,
            });
        }

        // Everything the map does not touch is local: biases everywhere and
        // the parameters of layers that were dense to begin with.
        let embedded: Vec<usize> = tied.iter().map(|t| t.layer).collect();
        for seg in fcn_layout.segments() {
            let untouched =
                seg.kind == ParamKind::Bias || !embedded.contains(&seg.layer);
            if untouched {
                mask_values[seg.offset..seg.offset + seg.len].fill(true);
            }
        }

        let mask = Mask {
            layout: Arc::clone(&fcn_layout),
            values: mask_values,
        };
        Ok(EmbeddingMap {
            cnn_spec: cnn_spec.clone(),
            fcn_spec,
            cnn_layout,
            fcn_layout,
            geoms,
            tied,
            mask,
        })
    }

    pub fn cnn_spec(&self) -> &ModelSpec {
        &self.cnn_spec
    }

    pub fn fcn_spec(&self) -> &ModelSpec {
        &self.fcn_spec
    }

    pub fn cnn_layout(&self) -> &Arc<ParamLayout> {
        &self.cnn_layout
    }

    pub fn fcn_layout(&self) -> &Arc<ParamLayout> {
        &self.fcn_layout
    }

    /// The local mask: true on the image of Φ's weight support, all biases,
    /// and all layers that were dense to begin with.
    pub fn local_mask(&self) -> &Mask {
        &self.mask
    }

    /// Geometry of every embedded layer, in layer order.
    pub fn embedded_layers(&self) -> &[EmbedGeom] {
        &self.geoms
    }

    /// Geometry of one embedded layer, if `layer` is one.
    pub fn embedded_geom(&self, layer: usize) -> Option<EmbedGeom> {
        self.geoms.iter().find(|g| g.layer == layer).copied()
    }

    /// Scatter CNN parameters through the map. Off-local entries come out
    /// exactly zero; tied entries are bit-copies of their source weight.
    pub fn apply(&self, theta_cnn: &ParamVector) -> Result<ParamVector> {
        if theta_cnn.len() != self.cnn_layout.total() {
            return Err(Error::shape(
                "embed: parameter vector does not match the source spec",
                format!("{}", self.cnn_layout.total()),
                format!("{}", theta_cnn.len()),
            ));
        }
        let mut theta = ParamVector::zeros(Arc::clone(&self.fcn_layout));
        for seg in self.cnn_layout.segments() {
            let dst_seg = self
                .fcn_layout
                .segment(seg.layer, seg.kind)
                .expect("layer lists are index-aligned");
            if let Some(t) = self.tied.iter().find(|t| t.layer == seg.layer) {
                let src = theta_cnn.slice(seg);
                match seg.kind {
                    ParamKind::Weight => {
                        let dst_off = dst_seg.offset;
                        let dst = &mut theta.values_mut()[dst_off..dst_off + dst_seg.len];
                        for (widx, ties) in t.weight.iter().enumerate() {
                            let val = src[widx];
                            for &f in ties {
                                dst[f as usize] = val;
                            }
                        }
                    }
                    ParamKind::Bias => {
                        let dst_off = dst_seg.offset;
                        let dst = &mut theta.values_mut()[dst_off..dst_off + dst_seg.len];
                        for (oc, ties) in t.bias.iter().enumerate() {
                            let val = src[oc];
                            for &f in ties {
                                dst[f as usize] = val;
                            }
                        }
                    }
                }
            } else {
                let src = theta_cnn.slice(seg);
                theta.slice_mut(dst_seg).copy_from_slice(src);
            }
        }
        Ok(theta)
    }

    /// Dense (row, col) positions tied to one conv weight of `layer`, the
    /// weight indexed `(c_out, c_in, u, v)` row-major.
    pub fn tied_positions(&self, layer: usize, weight_index: usize) -> Option<Vec<(usize, usize)>> {
        let t = self.tied.iter().find(|t| t.layer == layer)?;
        let ties = t.weight.get(weight_index)?;
        Some(
            ties.iter()
                .map(|&f| (f as usize / t.cols, f as usize % t.cols))
                .collect(),
        )
    }
}

/// Embed CNN parameters into the equivalent dense network under the default
/// memory budget. Returns the dense spec, the embedded parameters, and the
/// map itself for later mask / pullback use.
pub fn embed(
    cnn_spec: &ModelSpec,
    theta_cnn: &ParamVector,
) -> Result<(ModelSpec, ParamVector, EmbeddingMap)> {
    embed_with_budget(cnn_spec, theta_cnn, DEFAULT_EMBED_BUDGET_BYTES)
}

pub fn embed_with_budget(
    cnn_spec: &ModelSpec,
    theta_cnn: &ParamVector,
    budget_bytes: u64,
) -> Result<(ModelSpec, ParamVector, EmbeddingMap)> {
    let map = EmbeddingMap::build_with_budget(cnn_spec, budget_bytes)?;
    let theta = map.apply(theta_cnn)?;
    Ok((map.fcn_spec.clone(), theta, map))
}

/// The local mask of a map (free-function form of `EmbeddingMap::local_mask`).
pub fn local_mask(map: &EmbeddingMap) -> &Mask {
    map.local_mask()
}

fn check_mask_len(theta: &ParamVector, mask: &Mask, context: &'static str) -> Result<()> {
    if theta.len() != mask.len() {
        return Err(Error::shape(
            context,
            format!("{}", mask.len()),
            format!("{}", theta.len()),
        ));
    }
    Ok(())
}

/// Deviation ratio δ(θ) = ‖θ_off-local‖₂ / ‖θ‖₂, computed over weight
/// matrices only (every bias is local by construction, so biases carry no
/// off-local part and are excluded from both norms).
pub fn delta(theta: &ParamVector, mask: &Mask) -> Result<f64> {
    check_mask_len(theta, mask, "delta: mask and parameters disagree")?;
    let mut off_sq = 0.0f64;
    let mut total_sq = 0.0f64;
    for seg in theta.layout().segments() {
        if seg.kind != ParamKind::Weight {
            continue;
        }
        let vals = theta.slice(seg);
        let m = &mask.values[seg.offset..seg.offset + seg.len];
        for (v, &local) in vals.iter().zip(m) {
            let sq = (*v as f64) * (*v as f64);
            total_sq += sq;
            if !local {
                off_sq += sq;
            }
        }
    }
    if total_sq == 0.0 {
        return Err(Error::ZeroNorm {
            context: "delta: weight matrices are identically zero".into(),
        });
    }
    Ok((off_sq / total_sq).sqrt())
}

/// Pull a dense-shaped gradient back through Φ: each conv weight receives
/// the sum of the gradient over its tied positions, each conv bias the sum
/// over its replicated positions, and layers that were dense to begin with
/// are copied verbatim. This is Φᵀ, so ∇_θ L(Φ(θ)) = pullback(∇L at Φ(θ)).
pub fn pullback(map: &EmbeddingMap, g_efcn: &ParamVector) -> Result<ParamVector> {
    if g_efcn.len() != map.fcn_layout.total() {
        return Err(Error::shape(
            "pullback: gradient does not match the embedded spec",
            format!("{}", map.fcn_layout.total()),
            format!("{}", g_efcn.len()),
        ));
    }
    let mut g_cnn = ParamVector::zeros(Arc::clone(&map.cnn_layout));
    for seg in map.cnn_layout.segments() {
        let src_seg = map
            .fcn_layout
            .segment(seg.layer, seg.kind)
            .expect("layer lists are index-aligned");
        let src = g_efcn.slice(src_seg);
        if let Some(t) = map.tied.iter().find(|t| t.layer == seg.layer) {
            let dst_off = seg.offset;
            let dst = &mut g_cnn.values_mut()[dst_off..dst_off + seg.len];
            let tables = match seg.kind {
                ParamKind::Weight => &t.weight,
                ParamKind::Bias => &t.bias,
            };
            for (idx, ties) in tables.iter().enumerate() {
                let mut acc = 0.0f64;
                for &f in ties {
                    acc += src[f as usize] as f64;
                }
                dst[idx] = acc as f32;
            }
        } else {
            g_cnn.slice_mut(seg).copy_from_slice(src);
        }
    }
    Ok(g_cnn)
}

/// Zero out one side of the local / off-local split. Only weight matrices
/// are touched; biases survive either way.
pub fn mask_apply(theta: &ParamVector, mask: &Mask, keep: Keep) -> Result<ParamVector> {
    check_mask_len(theta, mask, "mask_apply: mask and parameters disagree")?;
    let mut out = theta.clone();
    for seg in theta.layout().segments().to_vec() {
        if seg.kind != ParamKind::Weight {
            continue;
        }
        let m = &mask.values[seg.offset..seg.offset + seg.len];
        let vals = out.slice_mut(&seg);
        for (v, &local) in vals.iter_mut().zip(m) {
            let kept = match keep {
                Keep::Local => local,
                Keep::OffLocal => !local,
            };
            if !kept {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}
