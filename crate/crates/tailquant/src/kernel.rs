//! Smoothing kernels.
//!
//! Everything here is compactly supported: compact support is what makes the
//! local-window construction of the conditional estimators exact, and the
//! asymptotic variance formulas only need the squared L2 norm of the
//! univariate kernel.

use crate::error::{Error, Result};

/// A symmetric kernel together with the constants the variance formulas
/// need.
///
/// `evaluate` treats its argument radially (it only looks at the Euclidean
/// norm), so the same spec can be used for p >= 1. The stored `l2_norm_sq`
/// and `sup_norm` are those of the univariate kernel; for p > 1 the radial
/// profile is not renormalized, which leaves every ratio-type estimator
/// unchanged and only rescales raw density values.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    /// kernel value as a function of the squared norm, on [0, 1)
    profile: fn(f64) -> f64,
    pub name: &'static str,
    /// integral of the squared univariate kernel
    pub l2_norm_sq: f64,
    pub sup_norm: f64,
    /// radius of the support ball (1 for the shipped kernels)
    pub support_radius: f64,
}

impl KernelSpec {
    /// Triweight kernel K(t) = (35/32)(1 - t^2)^3 on [-1, 1].
    ///
    /// Its squared L2 norm is 350/429.
    pub fn triweight() -> Self {
        KernelSpec {
            profile: |s| 35.0 / 32.0 * (1.0 - s).powi(3),
            name: "triweight",
            l2_norm_sq: 350.0 / 429.0,
            sup_norm: 35.0 / 32.0,
            support_radius: 1.0,
        }
    }

    /// K(u) for u in R^p. Zero outside the support ball, including on its
    /// boundary (the shipped profiles vanish there anyway).
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        let s: f64 = u.iter().map(|v| v * v).sum();
        let r2 = self.support_radius * self.support_radius;
        if s >= r2 {
            0.0
        } else {
            (self.profile)(s / r2)
        }
    }

    /// Scaled kernel K_h(u) = K(u/h) / h^p.
    pub fn scaled_eval(&self, h: f64, u: &[f64]) -> Result<f64> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::BadBandwidth(h));
        }
        Ok(self.scaled_unchecked(h, u))
    }

    /// Same as `scaled_eval` for a bandwidth already known to be valid.
    pub(crate) fn scaled_unchecked(&self, h: f64, u: &[f64]) -> f64 {
        let scaled: Vec<f64> = u.iter().map(|v| v / h).collect();
        self.evaluate(&scaled) / h.powi(u.len() as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triweight_pointwise_values() {
        let k = KernelSpec::triweight();
        assert_eq!(k.evaluate(&[0.0]), 35.0 / 32.0);
        // 35/32 * (3/4)^3 = 945/2048
        assert_eq!(k.evaluate(&[0.5]), 945.0 / 2048.0);
        assert_eq!(k.evaluate(&[1.0]), 0.0);
        assert_eq!(k.evaluate(&[-1.0]), 0.0);
        assert_eq!(k.evaluate(&[1.7]), 0.0);
        assert_eq!(k.evaluate(&[-3.0]), 0.0);
    }

    #[test]
    fn triweight_is_symmetric() {
        let k = KernelSpec::triweight();
        for i in 0..=40 {
            let t = i as f64 * 0.05;
            assert_eq!(k.evaluate(&[t]), k.evaluate(&[-t]));
        }
    }

    #[test]
    fn l2_norm_is_350_over_429() {
        let k = KernelSpec::triweight();
        assert_eq!(k.l2_norm_sq, 350.0 / 429.0);
        // ~0.8158508158508159
        assert!((k.l2_norm_sq - 0.815850815850816).abs() < 1e-14);
    }

    #[test]
    fn sup_norm_is_attained_at_zero() {
        let k = KernelSpec::triweight();
        assert_eq!(k.evaluate(&[0.0]), k.sup_norm);
        for i in 1..=20 {
            let t = i as f64 * 0.05;
            assert!(k.evaluate(&[t]) < k.sup_norm);
        }
    }

    #[test]
    fn scaled_eval_rejects_bad_bandwidth() {
        let k = KernelSpec::triweight();
        assert_eq!(k.scaled_eval(0.0, &[0.1]), Err(Error::BadBandwidth(0.0)));
        assert!(k.scaled_eval(-1.0, &[0.1]).is_err());
        assert!(k.scaled_eval(f64::NAN, &[0.1]).is_err());
        assert!(k.scaled_eval(f64::INFINITY, &[0.1]).is_err());
    }

    #[test]
    fn scaled_eval_matches_definition() {
        let k = KernelSpec::triweight();
        let h = 0.25;
        for i in 0..=10 {
            let u = -0.3 + i as f64 * 0.06;
            let direct = k.evaluate(&[u / h]) / h;
            assert_eq!(k.scaled_eval(h, &[u]).unwrap(), direct);
        }
    }

    #[test]
    fn radial_evaluation_in_two_dimensions() {
        let k = KernelSpec::triweight();
        // ||(0.3, 0.4)|| = 0.5, so this must agree with the univariate value
        assert!((k.evaluate(&[0.3, 0.4]) - k.evaluate(&[0.5])).abs() < 1e-15);
        assert_eq!(k.evaluate(&[0.8, 0.61]), 0.0);
    }
}
