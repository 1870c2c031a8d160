//! Gradients, finite differences, and Hessian-vector products.
//!
//! The three operations work on any [`Objective`] — a scalar function of a
//! parameter vector with an exact gradient. Models bind to the trait via
//! [`ModelObjective`] (loss over a fixed batch, dropout inactive, so the
//! objective is a deterministic function of θ); tests bind closed-form
//! quadratics. Free functions with the model signature are provided for the
//! common case.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::params::ParamVector;

/// Default ε₀ for the Hessian-vector finite-difference step.
pub const DEFAULT_HVP_EPS0: f64 = 1e-4;

/// A scalar objective with an exact gradient.
pub trait Objective {
    fn value(&self, theta: &ParamVector) -> Result<f64>;
    fn grad(&self, theta: &ParamVector) -> Result<ParamVector>;
}

/// Mean cross-entropy of a model over a fixed batch.
pub struct ModelObjective<'a> {
    pub model: &'a ModelSpec,
    pub batch: &'a Batch,
}

impl Objective for ModelObjective<'_> {
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        nn::loss(self.model, theta, self.batch)
    }
    fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        nn::grad(self.model, theta, self.batch).map(|(_, g)| g)
    }
}

/// Exact reverse-mode gradient of the model loss at `theta`.
pub fn grad(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    nn::grad(model, theta, batch).map(|(_, g)| g)
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_grad(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    eps: f64,
) -> Result<ParamVector> {
    finite_diff_grad_of(&ModelObjective { model, batch }, theta, eps)
}

/// Central-difference gradient of an arbitrary objective. Divides by the
/// *realized* span a−b of the two f32 perturbation points rather than the
/// nominal 2ε, which cancels the representation error of θ±ε.
pub fn finite_diff_grad_of<O: Objective>(
    obj: &O,
    theta: &ParamVector,
    eps: f64,
) -> Result<ParamVector> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut work = theta.clone();
    let mut g = ParamVector::zeros(theta.layout().clone());
    let step = eps as f32;
    for i in 0..theta.len() {
        let orig = theta.values()[i];
        let a = orig + step;
        let b = orig - step;
        if a == b {
            return Err(Error::InvalidArgument(format!(
                "eps {eps} is below f32 resolution at coordinate {i} (value {orig})"
            )));
        }
        work.values_mut()[i] = a;
        let la = obj.value(&work)?;
        work.values_mut()[i] = b;
        let lb = obj.value(&work)?;
        work.values_mut()[i] = orig;
        g.values_mut()[i] = ((la - lb) / (a as f64 - b as f64)) as f32;
    }
    Ok(g)
}

/// Hessian-vector product by central differences of the exact gradient,
/// with the default step ε₀ = 1e−4.
pub fn hvp(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
) -> Result<ParamVector> {
    hvp_with_eps(model, theta, batch, v, DEFAULT_HVP_EPS0)
}

/// [`hvp`] with an explicit ε₀.
pub fn hvp_with_eps(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
    eps0: f64,
) -> Result<ParamVector> {
    hvp_of(&ModelObjective { model, batch }, theta, v, eps0)
}

/// H·v ≈ (∇L(θ+εv̂) − ∇L(θ−εv̂)) · ‖v‖/(2ε), with v̂ = v/‖v‖ and
/// ε = ε₀·(1+‖θ‖). Normalizing v first makes the finite-difference step
/// scale-free: hvp(αv) = α·hvp(v) holds bitwise (the output differs only by
/// the exact scale factor).
pub fn hvp_of<O: Objective>(
    obj: &O,
    theta: &ParamVector,
    v: &ParamVector,
    eps0: f64,
) -> Result<ParamVector> {
    if !(eps0 > 0.0) {
        return Err(Error::InvalidArgument(format!("eps0 must be positive, got {eps0}")));
    }
    let v_norm = v.norm_l2();
    if v_norm == 0.0 {
        return Err(Error::ZeroNorm {
            context: "hvp direction".into(),
        });
    }
    let eps = eps0 * (1.0 + theta.norm_l2());
    let bump = (eps / v_norm) as f32;
    let mut plus = theta.clone();
    plus.add_scaled(bump, v);
    let mut minus = theta.clone();
    minus.add_scaled(-bump, v);
    let gp = obj.grad(&plus)?;
    let gm = obj.grad(&minus)?;
    let scale = v_norm / (2.0 * eps);
    let mut out = ParamVector::zeros(theta.layout().clone());
    for ((o, p), m) in out
        .values_mut()
        .iter_mut()
        .zip(gp.values())
        .zip(gm.values())
    {
        *o = ((*p as f64 - *m as f64) * scale) as f32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamLayout;
    use std::sync::Arc;

    /// L(θ) = ½ Σ d_i θ_i², computed in f64 with an exact gradient.
    struct DiagQuadratic {
        d: Vec<f64>,
    }

    impl Objective for DiagQuadratic {
        fn value(&self, theta: &ParamVector) -> Result<f64> {
            Ok(theta
                .values()
                .iter()
                .zip(&self.d)
                .map(|(t, d)| 0.5 * d * (*t as f64) * (*t as f64))
                .sum())
        }
        fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
            let mut g = ParamVector::zeros(theta.layout().clone());
            for ((gi, t), d) in g.values_mut().iter_mut().zip(theta.values()).zip(&self.d) {
                *gi = (d * *t as f64) as f32;
            }
            Ok(g)
        }
    }

    fn vec_of(values: &[f32]) -> ParamVector {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        ParamVector::from_values(layout, values.to_vec()).unwrap()
    }

    #[test]
    fn fd_grad_of_half_norm_squared() {
        // L = ½‖θ‖² at θ=(2): derivative 2.0 within 1e−6 at ε=1e−3.
        let obj = DiagQuadratic { d: vec![1.0] };
        let theta = vec_of(&[2.0]);
        let g = finite_diff_grad_of(&obj, &theta, 1e-3).unwrap();
        assert!((g.values()[0] as f64 - 2.0).abs() <= 1e-6, "got {}", g.values()[0]);
    }

    #[test]
    fn fd_grad_cubic_truncation_term() {
        // L = θ³ at θ=1, ε=1e−3 → 3 + ε² = 3.000001.
        struct Cubic;
        impl Objective for Cubic {
            fn value(&self, theta: &ParamVector) -> Result<f64> {
                Ok((theta.values()[0] as f64).powi(3))
            }
            fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
                let mut g = ParamVector::zeros(theta.layout().clone());
                g.values_mut()[0] = (3.0 * (theta.values()[0] as f64).powi(2)) as f32;
                Ok(g)
            }
        }
        let theta = vec_of(&[1.0]);
        let g = finite_diff_grad_of(&Cubic, &theta, 1e-3).unwrap();
        assert!(
            (g.values()[0] as f64 - 3.000001).abs() <= 5e-7,
            "got {}",
            g.values()[0]
        );
    }

    #[test]
    fn fd_grad_dead_coordinate_is_zero() {
        // second coordinate has weight 0 in the objective
        let obj = DiagQuadratic { d: vec![1.0, 0.0] };
        let theta = vec_of(&[1.5, -0.7]);
        let g = finite_diff_grad_of(&obj, &theta, 1e-3).unwrap();
        assert_eq!(g.values()[1], 0.0);
    }

    #[test]
    fn fd_grad_rejects_bad_eps() {
        let obj = DiagQuadratic { d: vec![1.0] };
        let theta = vec_of(&[1.0]);
        assert!(finite_diff_grad_of(&obj, &theta, 0.0).is_err());
        // eps far below f32 resolution at θ=1
        assert!(finite_diff_grad_of(&obj, &theta, 1e-12).is_err());
    }

    #[test]
    fn hvp_quadratic_is_exact_at_origin() {
        // H = diag(3,1): hvp(e1) = (3,0), hvp(e2) = (0,1), within 1e−6.
        let obj = DiagQuadratic { d: vec![3.0, 1.0] };
        let theta = vec_of(&[0.0, 0.0]);
        let h1 = hvp_of(&obj, &theta, &vec_of(&[1.0, 0.0]), DEFAULT_HVP_EPS0).unwrap();
        assert!((h1.values()[0] as f64 - 3.0).abs() <= 1e-6);
        assert!((h1.values()[1] as f64).abs() <= 1e-6);
        let h2 = hvp_of(&obj, &theta, &vec_of(&[0.0, 1.0]), DEFAULT_HVP_EPS0).unwrap();
        assert!((h2.values()[0] as f64).abs() <= 1e-6);
        assert!((h2.values()[1] as f64 - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn hvp_quadratic_away_from_origin_with_unit_step() {
        // For a quadratic the central difference is exact at any ε; a large
        // ε₀ keeps the f32 gradient rounding negligible next to the step.
        let obj = DiagQuadratic { d: vec![3.0, 1.0] };
        let theta = vec_of(&[0.7, -0.3]);
        let h = hvp_of(&obj, &theta, &vec_of(&[1.0, 0.0]), 1.0).unwrap();
        assert!((h.values()[0] as f64 - 3.0).abs() <= 1e-6, "got {}", h.values()[0]);
        assert!((h.values()[1] as f64).abs() <= 1e-6);
    }

    #[test]
    fn hvp_scales_linearly_in_v() {
        let obj = DiagQuadratic {
            d: vec![3.0, 1.0, -0.5, 2.0],
        };
        let theta = vec_of(&[0.2, -0.4, 0.8, 0.1]);
        let v = vec_of(&[1.0, 2.0, -1.0, 0.5]);
        let base = hvp_of(&obj, &theta, &v, DEFAULT_HVP_EPS0).unwrap();
        let mut v2 = v.clone();
        v2.scale(2.0);
        let double = hvp_of(&obj, &theta, &v2, DEFAULT_HVP_EPS0).unwrap();
        let mut vneg = v.clone();
        vneg.scale(-1.0);
        let neg = hvp_of(&obj, &theta, &vneg, DEFAULT_HVP_EPS0).unwrap();
        for i in 0..4 {
            assert_eq!(double.values()[i], 2.0 * base.values()[i]);
            assert_eq!(neg.values()[i], -base.values()[i]);
        }
    }

    #[test]
    fn hvp_rejects_zero_direction() {
        let obj = DiagQuadratic { d: vec![1.0] };
        let theta = vec_of(&[1.0]);
        let err = hvp_of(&obj, &theta, &vec_of(&[0.0]), DEFAULT_HVP_EPS0).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { .. }));
    }
}
