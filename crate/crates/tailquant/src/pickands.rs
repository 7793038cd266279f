//! Refined Pickands estimation of the conditional tail triple
//! (anchor quantile, scale, extreme-value index) and the Weissman-style
//! extrapolation built on it.
//!
//! With geometric level fractions τ_j = r^(j-1) and spacings
//! d_j = q(τ_j α|x) - q(τ_(j+1) α|x), the index estimator is
//!
//!   γ_hat = (1/ln r) Σ_(j=1)^(J-2) π_j ln(d_j / d_(j+1)),
//!
//! the scale estimator is a_hat = (1/K_γhat(r)) Σ π_j r^(γhat j) d_j, and a
//! quantile far in the tail (β ≤ α) is then
//!
//!   q_tilde(β|x) = q_hat(α|x) + K_γhat(α/β) a_hat.
//!
//! Everything is written against an abstract level ↦ quantile map, so the
//! same code runs on the kernel window estimator and on analytic oracles in
//! tests.

use crate::conditional::{LocalWindow, Sample};
use crate::error::{Error, Result};
use crate::evt::{compensated_sum, k_fn};
use crate::kernel::KernelSpec;

/// Weight schemes from the two refined-Pickands variants: RP1 is flat,
/// RP2 ramps linearly toward the deeper levels. They coincide at J = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Rp1,
    Rp2,
}

/// Flat weights π_j = 1/(J-2), j = 1..J-2.
pub fn rp1_weights(j_levels: usize) -> Result<Vec<f64>> {
    if j_levels < 3 {
        return Err(Error::BadConfig(format!("need J >= 3 levels, got {j_levels}")));
    }
    let m = j_levels - 2;
    Ok(vec![1.0 / m as f64; m])
}

/// Linear weights π_j = 2j / ((J-1)(J-2)), j = 1..J-2.
pub fn rp2_weights(j_levels: usize) -> Result<Vec<f64>> {
    if j_levels < 3 {
        return Err(Error::BadConfig(format!("need J >= 3 levels, got {j_levels}")));
    }
    let m = j_levels - 2;
    let denom = ((j_levels - 1) * m) as f64;
    Ok((1..=m).map(|j| 2.0 * j as f64 / denom).collect())
}

/// Configuration of the refined Pickands estimator: anchor level α, number
/// of levels J, level ratio r, and the J-2 log-spacing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RpConfig {
    alpha: f64,
    j_levels: usize,
    r: f64,
    weights: Vec<f64>,
}

impl RpConfig {
    pub fn new(alpha: f64, j_levels: usize, r: f64, weights: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadLevel(alpha));
        }
        if j_levels < 3 {
            return Err(Error::BadConfig(format!("need J >= 3 levels, got {j_levels}")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::BadConfig(format!("level ratio r must lie in (0, 1), got {r}")));
        }
        if weights.len() != j_levels - 2 {
            return Err(Error::BadWeights(format!(
                "need J - 2 = {} weights, got {}",
                j_levels - 2,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::BadWeights(format!("weights must be nonnegative, got {w}")));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadWeights(format!("weights sum to {total}, expected 1")));
        }
        Ok(RpConfig { alpha, j_levels, r, weights })
    }

    pub fn with_scheme(alpha: f64, j_levels: usize, r: f64, scheme: WeightScheme) -> Result<Self> {
        let weights = match scheme {
            WeightScheme::Rp1 => rp1_weights(j_levels)?,
            WeightScheme::Rp2 => rp2_weights(j_levels)?,
        };
        RpConfig::new(alpha, j_levels, r, weights)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn j_levels(&self) -> usize {
        self.j_levels
    }

    pub fn ratio(&self) -> f64 {
        self.r
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The estimation levels τ_j α = r^(j-1) α, j = 1..=J, decreasing.
    pub fn levels(&self) -> Vec<f64> {
        (0..self.j_levels).map(|e| self.r.powi(e as i32) * self.alpha).collect()
    }
}

/// Fitted tail triple. Constructed only when every spacing ratio entering
/// the estimator was strictly positive and finite; degenerate fits surface
/// as [`Error::DegenerateSpacing`] instead of NaN fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RpEstimate {
    /// extreme-value index estimate
    pub gamma_hat: f64,
    /// auxiliary scale estimate (always positive)
    pub a_hat: f64,
    /// anchor quantile q_hat(α|x)
    pub anchor_quantile: f64,
    /// spacings d_j = q(τ_j α) - q(τ_(j+1) α), j = 1..J-1 (all negative)
    pub spacings: Vec<f64>,
}

/// Run the estimator against an abstract quantile map (level in (0,1) to
/// value). The map is queried once per level, deepest level last.
pub fn rp_estimate_with(
    mut quantile: impl FnMut(f64) -> Result<f64>,
    cfg: &RpConfig,
) -> Result<RpEstimate> {
    let levels = cfg.levels();
    let mut qs = Vec::with_capacity(levels.len());
    for &lvl in &levels {
        let q = quantile(lvl)?;
        if !q.is_finite() {
            return Err(Error::BadSample(format!("quantile map returned {q} at level {lvl}")));
        }
        qs.push(q);
    }

    let jl = cfg.j_levels;
    let mut spacings = Vec::with_capacity(jl - 1);
    for m in 0..jl - 1 {
        let d = qs[m] - qs[m + 1];
        if d == 0.0 {
            return Err(Error::DegenerateSpacing { index: m + 1 });
        }
        if d > 0.0 {
            // levels decrease with j, so quantiles must not
            return Err(Error::NonMonotone { index: m + 1 });
        }
        spacings.push(d);
    }

    let ln_r = cfg.r.ln();
    let mut acc = 0.0;
    for j in 1..=jl - 2 {
        acc += cfg.weights[j - 1] * (spacings[j - 1] / spacings[j]).ln();
    }
    let gamma_hat = acc / ln_r;

    let k_r = k_fn(gamma_hat, cfg.r)?; // negative for r in (0,1)
    let mut s = 0.0;
    for j in 1..=jl - 2 {
        s += cfg.weights[j - 1] * cfg.r.powf(gamma_hat * j as f64) * spacings[j - 1];
    }
    let a_hat = s / k_r;

    Ok(RpEstimate { gamma_hat, a_hat, anchor_quantile: qs[0], spacings })
}

/// Tail index estimate alone.
pub fn rp_gamma(quantile: impl FnMut(f64) -> Result<f64>, cfg: &RpConfig) -> Result<f64> {
    rp_estimate_with(quantile, cfg).map(|e| e.gamma_hat)
}

/// Auxiliary scale estimate alone.
pub fn rp_scale(quantile: impl FnMut(f64) -> Result<f64>, cfg: &RpConfig) -> Result<f64> {
    rp_estimate_with(quantile, cfg).map(|e| e.a_hat)
}

/// Run the estimator on the kernel window quantiles of a sample at x.
pub fn rp_estimate(
    s: &Sample,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
    cfg: &RpConfig,
) -> Result<RpEstimate> {
    let window = LocalWindow::build(s, kernel, h, x)?;
    rp_estimate_from_window(&window, cfg)
}

/// Same, for a window the caller already built (e.g. when scanning many
/// anchor levels over one bandwidth).
pub fn rp_estimate_from_window(window: &LocalWindow, cfg: &RpConfig) -> Result<RpEstimate> {
    rp_estimate_with(|lvl| window.quantile(lvl).map(|q| q.value), cfg)
}

/// Extrapolate the fitted triple from the anchor level α down to β ≤ α:
/// q_tilde(β|x) = q_hat(α|x) + K_γhat(α/β) a_hat.
///
/// β = α returns the anchor exactly (K_z(1) = 0 with no rounding).
pub fn extrapolate(est: &RpEstimate, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadLevel(alpha));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BadLevel(beta));
    }
    if beta > alpha {
        return Err(Error::LevelOrder { beta, alpha });
    }
    Ok(est.anchor_quantile + k_fn(est.gamma_hat, alpha / beta)? * est.a_hat)
}
