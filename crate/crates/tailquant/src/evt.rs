//! The K_z calculus and the covariance algebra of the tail estimators.
//!
//! K_z(u) = ∫_1^u v^(z-1) dv is the box-cox style primitive that shows up in
//! every first- and second-order expansion here: the tail quantile function
//! satisfies q(tα|x) ≈ q(α|x) + a(q(α|x)|x) K_γ(1/t), the extrapolation step
//! is literally "add a_hat * K_gamma_hat(alpha/beta)", and the limiting
//! covariance of the refined Pickands triple is an explicit function of
//! K_γ(r) and K'_γ(r). Getting these scalars right to ~1e-12 near z = 0 is
//! what keeps the heavy/light/short tail regimes on one code path.

use crate::error::{Error, Result};

/// Below this value of |z ln u| the closed forms lose too many digits to
/// cancellation, so we switch to series expansions. Four series terms reach
/// full double precision well before the cutoff, and at the cutoff the
/// closed forms (written against expm1) are still good to ~1e-11 relative,
/// so the two branches join smoothly.
const SERIES_CUTOFF: f64 = 1e-4;

fn check_u(u: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::KDomain(u));
    }
    Ok(u.ln())
}

/// K_z(u) = (u^z - 1)/z for z != 0 and ln(u) for z = 0, defined for u > 0.
pub fn k_fn(z: f64, u: f64) -> Result<f64> {
    let l = check_u(u)?;
    let w = z * l;
    if w.abs() < SERIES_CUTOFF {
        // K_z(u) = L (1 + w/2 + w^2/6 + w^3/24 + ...), w = zL, L = ln u
        Ok(l * (1.0 + w * (0.5 + w * (1.0 / 6.0 + w / 24.0))))
    } else {
        // (u^z - 1)/z through expm1 keeps precision for moderate w as well
        Ok(w.exp_m1() / z)
    }
}

/// d/dz K_z(u) = ∫_1^u v^(z-1) ln(v) dv.
///
/// The closed form (u^z ln u)/z - (u^z - 1)/z^2 cancels catastrophically for
/// small |z ln u|; rewriting the numerator as (w-1) expm1(w) + w with
/// w = z ln u keeps the relative error near 2eps/|w|, and the series takes
/// over below the cutoff.
pub fn k_fn_prime(z: f64, u: f64) -> Result<f64> {
    let l = check_u(u)?;
    let w = z * l;
    if w.abs() < SERIES_CUTOFF {
        // L^2 (1/2 + w/3 + w^2/8 + w^3/30 + ...)
        Ok(l * l * (0.5 + w * (1.0 / 3.0 + w * (0.125 + w / 30.0))))
    } else {
        Ok(l * l * ((w - 1.0) * w.exp_m1() + w) / (w * w))
    }
}

/// Inverse of t = K_z(u) in u: (1 + z t)^(1/z) for z != 0, exp(t) for z = 0.
///
/// For z != 0 the expression only makes sense when 1 + z t > 0.
pub fn k_fn_inverse(z: f64, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::KInverseDomain { z, t });
    }
    if z == 0.0 {
        return Ok(t.exp());
    }
    let zt = z * t;
    if zt <= -1.0 {
        return Err(Error::KInverseDomain { z, t });
    }
    // exp(ln(1+zt)/z) survives z -> 0 without special casing
    Ok((zt.ln_1p() / z).exp())
}

/// Second-order remainder of the tail expansion at multiplier t:
///
///   b(t, α) = (q(tα) - q(α)) / a(q(α)) - K_γ(1/t)
///
/// `quantile` maps a level in (0,1) to the conditional quantile and `aux`
/// maps a quantile value y to the auxiliary scale a(y|x). The remainder is
/// identically zero for exact Pareto tails (a(y) = γ y) and exact
/// exponential tails (a = 1, γ = 0), which is what the diagnostics check.
pub fn remainder_b(
    quantile: impl Fn(f64) -> f64,
    aux: impl Fn(f64) -> f64,
    gamma: f64,
    t: f64,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadLevel(alpha));
    }
    if !(t > 0.0) || t * alpha >= 1.0 {
        return Err(Error::BadLevel(t * alpha));
    }
    let q_alpha = quantile(alpha);
    let q_t = quantile(t * alpha);
    let a = aux(q_alpha);
    if a == 0.0 || !a.is_finite() {
        return Err(Error::BadSample(format!("auxiliary scale a = {a} at the anchor quantile")));
    }
    Ok((q_t - q_alpha) / a - k_fn(gamma, 1.0 / t)?)
}

/// A decreasing ladder of level fractions 1 = τ_1 > τ_2 > ... > τ_J > 0.
///
/// The geometric constructor records the common ratio; the covariance
/// formulas ([`rp_covariance`]) are only available in that case.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionLevels {
    taus: Vec<f64>,
    ratio: Option<f64>,
}

impl FractionLevels {
    /// τ_j = r^(j-1) for j = 1..=j_levels, with r in (0,1).
    pub fn geometric(j_levels: usize, r: f64) -> Result<Self> {
        if j_levels == 0 {
            return Err(Error::BadConfig("need at least one level".into()));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::BadConfig(format!("level ratio r must lie in (0, 1), got {r}")));
        }
        let taus = (0..j_levels).map(|e| r.powi(e as i32)).collect();
        Ok(FractionLevels { taus, ratio: Some(r) })
    }

    /// Arbitrary strictly decreasing levels in (0, 1], τ_1 = 1 not required
    /// but the first level must dominate the rest.
    pub fn from_taus(taus: &[f64]) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::BadConfig("need at least one level".into()));
        }
        for (i, &t) in taus.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::BadConfig(format!("tau_{} = {t} outside (0, 1]", i + 1)));
            }
            if i > 0 && t >= taus[i - 1] {
                return Err(Error::BadConfig(format!("levels must decrease strictly, tau_{} >= tau_{}", i + 1, i)));
            }
        }
        Ok(FractionLevels { taus: taus.to_vec(), ratio: None })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Common ratio when the ladder was built geometrically.
    pub fn ratio(&self) -> Option<f64> {
        self.ratio
    }
}

/// Covariance of the weak limit of the intermediate quantile process at the
/// levels τ_j: Σ_{jj'} = (τ_j τ_j')^(-γ) τ_(j∧j')^(-1), where j∧j' is the
/// smaller *index* (hence the larger level). Row-major J x J.
pub fn sigma_matrix(gamma: f64, levels: &FractionLevels) -> Vec<Vec<f64>> {
    let taus = levels.taus();
    let j = taus.len();
    let mut m = vec![vec![0.0; j]; j];
    for a in 0..j {
        for b in 0..j {
            let lead = taus[a.min(b)];
            m[a][b] = (taus[a] * taus[b]).powf(-gamma) / lead;
        }
    }
    m
}

/// Same covariance with γ replaced by min(γ, 0): the form taken by the
/// self-normalized quantile ratios, where heavy tails stop contributing
/// extra variance.
pub fn sigma_tilde_matrix(gamma: f64, levels: &FractionLevels) -> Vec<Vec<f64>> {
    sigma_matrix(gamma.min(0.0), levels)
}

/// Gradient of the extrapolation map with respect to the estimated triple
/// (quantile, scale, index): c = (1, -(γ∧0), (γ∧0)^2).
///
/// Together with [`rp_covariance`] this gives the asymptotic variance of the
/// extrapolated quantile as c' S c times the usual rate factor.
pub fn extrapolation_variance_factor(gamma: f64) -> [f64; 3] {
    let g = gamma.min(0.0);
    [1.0, -g, g * g]
}

/// Asymptotic covariance S(x) of the normalized estimation errors, ordered
/// (γ_hat, a_hat/a, q_hat(α|x)/a), for the refined Pickands estimator with
/// geometric levels and weights π; the scale and anchor errors are relative
/// to the auxiliary scale a = a(q(α|x)).
///
/// S = (‖K‖₂² / (g(x) K_γ(r)²)) · A Σ A', where Σ is [`sigma_matrix`] and
/// the rows of the 3 x J matrix A collect, for each level j, the
/// coefficients with which the j-th component of the limiting Gaussian
/// vector enters the index, scale and quantile errors:
///
///   A_1j = r^(γ j) (β₀ π_j + β₁ π_(j-1) + β₂ π_(j-2))   with the γ betas,
///   A_2j = likewise with the scale betas,
///   A_3j = K_γ(r) 1{j = 1},
///
/// where π is padded with zeros outside 1..=J-2 and, writing E(π) = Σ j π_j
/// and D = E(π) - K'_γ(r)/(ln(r) K_γ(r)),
///
///   β₀^(γ) = 1/ln r,  β₁^(γ) = -(1 + r^(-γ))/ln r,  β₂^(γ) = r^(-γ)/ln r,
///   β₀^(a) = 1 + D,   β₁^(a) = -r^(-γ) - (r^(-γ) + 1) D,  β₂^(a) = r^(-γ) D.
pub fn rp_covariance(
    gamma: f64,
    levels: &FractionLevels,
    weights: &[f64],
    kernel_l2: f64,
    density_at_x: f64,
) -> Result<[[f64; 3]; 3]> {
    let r = levels.ratio().ok_or(Error::NonGeometricLevels)?;
    let j_levels = levels.len();
    if j_levels < 3 {
        return Err(Error::BadConfig(format!("need at least 3 levels, got {j_levels}")));
    }
    if weights.len() != j_levels - 2 {
        return Err(Error::BadWeights(format!(
            "need J - 2 = {} weights, got {}",
            j_levels - 2,
            weights.len()
        )));
    }
    let wsum: f64 = compensated_sum(weights);
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(Error::BadWeights(format!("weights sum to {wsum}, expected 1")));
    }
    if !(density_at_x > 0.0) {
        return Err(Error::BadSample(format!("density at x must be positive, got {density_at_x}")));
    }

    let ln_r = r.ln();
    let r_mg = r.powf(-gamma);
    let k_r = k_fn(gamma, r)?;
    let kp_r = k_fn_prime(gamma, r)?;

    // padded weights: pi[m] = π_m for m = 1..=J, zero outside 1..=J-2
    let pi = |m: i64| -> f64 {
        if m >= 1 && (m as usize) <= j_levels - 2 {
            weights[m as usize - 1]
        } else {
            0.0
        }
    };
    let e_pi: f64 = weights.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum();
    let d = e_pi - kp_r / (ln_r * k_r);

    let beta_gamma = [1.0 / ln_r, -(1.0 + r_mg) / ln_r, r_mg / ln_r];
    let beta_scale = [1.0 + d, -r_mg - (r_mg + 1.0) * d, r_mg * d];

    let mut a = vec![[0.0f64; 3]; j_levels]; // column-major: a[j][row]
    for jj in 1..=j_levels as i64 {
        let rg = r.powf(gamma * jj as f64);
        let combo = |beta: &[f64; 3]| beta[0] * pi(jj) + beta[1] * pi(jj - 1) + beta[2] * pi(jj - 2);
        a[jj as usize - 1][0] = rg * combo(&beta_gamma);
        a[jj as usize - 1][1] = rg * combo(&beta_scale);
        a[jj as usize - 1][2] = if jj == 1 { k_r } else { 0.0 };
    }

    let sigma = sigma_matrix(gamma, levels);
    let scale = kernel_l2 / (density_at_x * k_r * k_r);
    let mut s = [[0.0f64; 3]; 3];
    for row in 0..3 {
        for col in 0..3 {
            let mut acc = 0.0;
            for p in 0..j_levels {
                for q in 0..j_levels {
                    acc += a[p][row] * sigma[p][q] * a[q][col];
                }
            }
            s[row][col] = scale * acc;
        }
    }
    Ok(s)
}

/// Neumaier-compensated sum; used wherever "sums to one" must be checked
/// without letting the check itself drown in rounding.
pub(crate) fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
