//! Local maximum-likelihood fit of a generalized Pareto model to kernel
//! weighted exceedances — the benchmark the tail estimators are compared
//! against.
//!
//! The threshold u_x is an in-window order statistic (or any caller-chosen
//! value via [`build_exceedances_at`]); the fit maximizes
//!
//!   L(σ, γ) = (1/N_x) Σ_i K_h(X_i - x) log g(Z_i; σ, γ)
//!
//! over the whole-sample exceedances Z_i = Y_i - u_x > 0, where N_x counts
//! all exceedances and the kernel weight kills the terms outside the window.
//! The support constraint 1 + γ z/σ > 0 is only enforced where the weight is
//! positive; violations yield a -inf sentinel rather than an error so the
//! optimizer can treat them as rejected points.

use crate::error::{Error, Result};
use crate::evt::k_fn;
use crate::kernel::KernelSpec;
use crate::conditional::Sample;

/// Floor for γ during optimization; the likelihood is unbounded along
/// degenerate directions as γ approaches -1.
const GAMMA_FLOOR: f64 = -1.0 + 1e-6;

/// Exceedances of a threshold with their kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceSet {
    /// the threshold u_x
    pub threshold: f64,
    /// z_i = y_i - u_x > 0 for every sample point strictly above the
    /// threshold, in sample order
    pub excesses: Vec<f64>,
    /// kernel weights K_h(x - X_i) aligned with `excesses`; zero outside the
    /// window
    pub weights: Vec<f64>,
    /// observations with ||X_i - x|| <= h (window size, not exceedances)
    pub n_star: usize,
    /// exceedances carrying positive weight
    pub k_x: usize,
}

/// Exceedances over the (n_star - k_exceed)-th ascending in-window order
/// statistic, the covariate-dependent threshold of the benchmark.
pub fn build_exceedances(
    s: &Sample,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
    k_exceed: usize,
) -> Result<ExceedanceSet> {
    let (n_star, mut in_window_ys) = window_scan(s, kernel, h, x)?.1;
    if n_star == 0 {
        return Err(Error::EmptyWindow);
    }
    if k_exceed == 0 || k_exceed >= n_star {
        return Err(Error::BadConfig(format!(
            "exceedance count k must satisfy 1 <= k < n_star = {n_star}, got {k_exceed}"
        )));
    }
    in_window_ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = in_window_ys[n_star - k_exceed - 1];
    build_exceedances_at(s, kernel, h, x, threshold)
}

/// Exceedances over an explicit threshold (used e.g. when thresholds come
/// from unconditional sample quantiles).
pub fn build_exceedances_at(
    s: &Sample,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
    threshold: f64,
) -> Result<ExceedanceSet> {
    let (weights_all, (n_star, _)) = window_scan(s, kernel, h, x)?;
    let mut excesses = Vec::new();
    let mut weights = Vec::new();
    let mut k_x = 0;
    for i in 0..s.n() {
        let y = s.y(i);
        if y > threshold {
            excesses.push(y - threshold);
            let w = weights_all[i];
            if w > 0.0 {
                k_x += 1;
            }
            weights.push(w);
        }
    }
    Ok(ExceedanceSet { threshold, excesses, weights, n_star, k_x })
}

/// One pass over the sample: per-point kernel weight (zero outside the
/// support), the closed-ball member count, and the member responses.
fn window_scan(
    s: &Sample,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
) -> Result<(Vec<f64>, (usize, Vec<f64>))> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::BadBandwidth(h));
    }
    if x.len() != s.dim() {
        return Err(Error::BadSample(format!(
            "evaluation point has dimension {}, sample has {}",
            x.len(),
            s.dim()
        )));
    }
    let radius = h * kernel.support_radius;
    let r2 = radius * radius;
    let mut weights = Vec::with_capacity(s.n());
    let mut member_ys = Vec::new();
    let mut n_star = 0;
    let mut diff = vec![0.0; s.dim()];
    for i in 0..s.n() {
        let row = s.x_row(i);
        let mut d2 = 0.0;
        for (k, &xv) in x.iter().enumerate() {
            let d = row[k] - xv;
            diff[k] = d;
            d2 += d * d;
        }
        if d2 <= r2 {
            n_star += 1;
            member_ys.push(s.y(i));
        }
        weights.push(kernel.scaled_unchecked(h, &diff));
    }
    Ok((weights, (n_star, member_ys)))
}

/// Weighted GP log-likelihood (mean form).
///
/// Returns -inf as a sentinel when (σ, γ) leaves the admissible region for
/// any positively weighted exceedance, or when σ is not a positive finite
/// number; this is a rejected optimization point, not an error.
pub fn gp_loglik(exc: &ExceedanceSet, sigma: f64, gamma: f64) -> f64 {
    if exc.excesses.is_empty() || !sigma.is_finite() || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ln_sigma = sigma.ln();
    let mut acc = 0.0;
    for (&z, &w) in exc.excesses.iter().zip(&exc.weights) {
        if w <= 0.0 {
            continue; // no contribution and no support constraint
        }
        let log_g = if gamma == 0.0 {
            -ln_sigma - z / sigma
        } else {
            let t = gamma * z / sigma;
            if t <= -1.0 {
                return f64::NEG_INFINITY;
            }
            -ln_sigma - (1.0 + 1.0 / gamma) * t.ln_1p()
        };
        acc += w * log_g;
    }
    acc / exc.excesses.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFitOptions {
    /// relative tolerance on the simplex (function values and coordinates)
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions { rel_tol: 1e-8, max_iters: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpFit {
    pub sigma: f64,
    pub gamma: f64,
    /// the weighted log-likelihood at (sigma, gamma)
    pub loglik: f64,
    /// false when the simplex hit the iteration cap before contracting
    pub converged: bool,
    pub iterations: usize,
}

/// Maximize the weighted GP log-likelihood: coarse (γ, σ) grid for a seed,
/// then Nelder–Mead refinement in (ln σ, γ). The returned point is never
/// worse than the best grid seed.
pub fn gp_fit(exc: &ExceedanceSet, opts: &GpFitOptions) -> Result<GpFit> {
    if exc.k_x < 2 {
        return Err(Error::InsufficientExceedances { got: exc.k_x, need: 2 });
    }
    let wsum: f64 = exc.weights.iter().filter(|w| **w > 0.0).sum();
    let zbar: f64 = exc
        .excesses
        .iter()
        .zip(&exc.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(z, w)| z * w)
        .sum::<f64>()
        / wsum;

    let mut objective = |p: &[f64; 2]| -> f64 {
        let (ln_sigma, gamma) = (p[0], p[1]);
        if gamma < GAMMA_FLOOR {
            return f64::INFINITY;
        }
        let l = gp_loglik(exc, ln_sigma.exp(), gamma);
        if l == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            -l
        }
    };

    // coarse seed grid: γ from -0.9 to 1.5 in steps of 0.1, σ log-spaced
    // over two decades around the weighted exceedance mean. The γ >= 0 cells
    // are always admissible, so a finite seed always exists.
    let mut seed = [zbar.ln(), 0.0];
    let mut f_seed = f64::INFINITY;
    for gi in -9..=15 {
        let gamma = gi as f64 / 10.0;
        for si in 0..15 {
            let ln_sigma = zbar.ln() + (-1.0 + 2.0 * si as f64 / 14.0) * std::f64::consts::LN_10;
            let p = [ln_sigma, gamma];
            let f = objective(&p);
            if f < f_seed {
                f_seed = f;
                seed = p;
            }
        }
    }
    debug_assert!(f_seed.is_finite());

    let (point, f_best, converged, iterations) =
        nelder_mead(&mut objective, seed, [0.5, 0.2], opts.rel_tol, opts.max_iters);
    debug_assert!(f_best <= f_seed);

    Ok(GpFit {
        sigma: point[0].exp(),
        gamma: point[1],
        loglik: -f_best,
        converged,
        iterations,
    })
}

/// Tail quantile from the fitted model:
///
///   q_GP(β|x) = u_x + σ_hat K_γhat(k_x / (n_star β)),
///
/// which for γ ≠ 0 equals u_x + (σ/γ)((n_star β / k_x)^(-γ) - 1); going
/// through K keeps it continuous across γ = 0.
pub fn gp_quantile(fit: &GpFit, exc: &ExceedanceSet, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BadLevel(beta));
    }
    if exc.k_x == 0 || exc.n_star == 0 {
        return Err(Error::InsufficientExceedances { got: exc.k_x, need: 1 });
    }
    let u = exc.k_x as f64 / (exc.n_star as f64 * beta);
    Ok(fit.threshold_quantile(exc.threshold, u))
}

impl GpFit {
    fn threshold_quantile(&self, threshold: f64, u: f64) -> f64 {
        threshold + self.sigma * k_fn(self.gamma, u).expect("u > 0 by construction")
    }
}

/// Classic Nelder–Mead on R^2 (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2). Returns the best vertex, its value, whether the simplex
/// contracted below the tolerance, and how many iterations ran.
fn nelder_mead(
    f: &mut impl FnMut(&[f64; 2]) -> f64,
    start: [f64; 2],
    steps: [f64; 2],
    rel_tol: f64,
    max_iters: usize,
) -> ([f64; 2], f64, bool, usize) {
    let mut simplex = [
        start,
        [start[0] + steps[0], start[1]],
        [start[0], start[1] + steps[1]],
    ];
    let mut fv = [f(&simplex[0]), f(&simplex[1]), f(&simplex[2])];

    let order = |sx: &mut [[f64; 2]; 3], fv: &mut [f64; 3]| {
        // insertion sort by value, stable and branch-simple for 3 points
        for i in 1..3 {
            let (p, v) = (sx[i], fv[i]);
            let mut j = i;
            while j > 0 && fv[j - 1] > v {
                sx[j] = sx[j - 1];
                fv[j] = fv[j - 1];
                j -= 1;
            }
            sx[j] = p;
            fv[j] = v;
        }
    };

    order(&mut simplex, &mut fv);
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        // convergence: both function spread and coordinate spread small
        let f_spread = (fv[2] - fv[0]).abs();
        let x_spread = (0..2)
            .map(|d| {
                let lo = simplex.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if fv[0].is_finite()
            && f_spread <= rel_tol * (fv[0].abs() + rel_tol)
            && x_spread <= rel_tol * (1.0 + simplex[0][0].abs().max(simplex[0][1].abs()))
        {
            converged = true;
            break;
        }
        iters += 1;

        let centroid = [
            (simplex[0][0] + simplex[1][0]) / 2.0,
            (simplex[0][1] + simplex[1][1]) / 2.0,
        ];
        let reflect = [
            centroid[0] + (centroid[0] - simplex[2][0]),
            centroid[1] + (centroid[1] - simplex[2][1]),
        ];
        let f_r = f(&reflect);

        if f_r < fv[0] {
            let expand = [
                centroid[0] + 2.0 * (centroid[0] - simplex[2][0]),
                centroid[1] + 2.0 * (centroid[1] - simplex[2][1]),
            ];
            let f_e = f(&expand);
            if f_e < f_r {
                simplex[2] = expand;
                fv[2] = f_e;
            } else {
                simplex[2] = reflect;
                fv[2] = f_r;
            }
        } else if f_r < fv[1] {
            simplex[2] = reflect;
            fv[2] = f_r;
        } else {
            // contract, inside or outside
            let (towards, f_t) = if f_r < fv[2] { (reflect, f_r) } else { (simplex[2], fv[2]) };
            let contract = [
                centroid[0] + 0.5 * (towards[0] - centroid[0]),
                centroid[1] + 0.5 * (towards[1] - centroid[1]),
            ];
            let f_c = f(&contract);
            if f_c < f_t {
                simplex[2] = contract;
                fv[2] = f_c;
            } else {
                // shrink toward the best vertex
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    fv[i] = f(&simplex[i]);
                }
            }
        }
        order(&mut simplex, &mut fv);
    }
    (simplex[0], fv[0], converged, iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_exceedances(zs: &[f64]) -> ExceedanceSet {
        ExceedanceSet {
            threshold: 0.0,
            excesses: zs.to_vec(),
            weights: vec![1.0; zs.len()],
            n_star: zs.len(),
            k_x: zs.len(),
        }
    }

    #[test]
    fn threshold_is_the_order_statistic() {
        // x-grid tight around 0.5 so all points are in the window
        let xs = vec![0.4, 0.45, 0.5, 0.55, 0.6];
        let ys = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        let s = Sample::univariate(xs, ys).unwrap();
        let kernel = KernelSpec::triweight();
        // n_star = 5, k = 2: threshold is the 3rd ascending order stat = 3
        let exc = build_exceedances(&s, &kernel, 0.5, &[0.5], 2).unwrap();
        assert_eq!(exc.threshold, 3.0);
        assert_eq!(exc.n_star, 5);
        // strict exceedances: 5 and 4
        assert_eq!(exc.excesses.len(), 2);
        assert_eq!(exc.k_x, 2);
        // k out of range
        assert!(build_exceedances(&s, &kernel, 0.5, &[0.5], 0).is_err());
        assert!(build_exceedances(&s, &kernel, 0.5, &[0.5], 5).is_err());
    }

    #[test]
    fn exceedances_at_explicit_threshold() {
        let s = Sample::univariate(vec![0.1, 0.5, 0.9], vec![1.0, 2.0, 3.0]).unwrap();
        let kernel = KernelSpec::triweight();
        let exc = build_exceedances_at(&s, &kernel, 0.3, &[0.5], 1.5).unwrap();
        // exceedances are whole-sample: 2.0 and 3.0 exceed, but only the one
        // at x = 0.5 carries weight
        assert_eq!(exc.excesses, vec![0.5, 1.5]);
        assert_eq!(exc.k_x, 1);
        assert_eq!(exc.n_star, 1);
        assert_eq!(exc.weights[1], 0.0);
    }

    #[test]
    fn loglik_exponential_case() {
        // γ = 0, unweighted: L = -ln σ - mean(z)/σ, maximized at σ = mean(z)
        let exc = flat_exceedances(&[0.5, 1.0, 1.5, 2.0]);
        let zbar = 1.25;
        let at_mle = gp_loglik(&exc, zbar, 0.0);
        assert!((at_mle - (-zbar.ln() - 1.0)).abs() < 1e-14);
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            assert!(gp_loglik(&exc, sigma, 0.0) <= at_mle + 1e-15);
        }
    }

    #[test]
    fn loglik_support_sentinel() {
        let exc = flat_exceedances(&[1.0, 2.0, 10.0]);
        // γ = -0.5, σ = 1: 1 + γ z/σ = -4 at z = 10 → rejected
        assert_eq!(gp_loglik(&exc, 1.0, -0.5), f64::NEG_INFINITY);
        // σ <= 0 is also a rejected point, not a panic
        assert_eq!(gp_loglik(&exc, 0.0, 0.2), f64::NEG_INFINITY);
        assert_eq!(gp_loglik(&exc, -1.0, 0.2), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_weight_exceedances_do_not_constrain_support() {
        let mut exc = flat_exceedances(&[1.0, 2.0]);
        exc.excesses.push(1000.0);
        exc.weights.push(0.0);
        let l = gp_loglik(&exc, 1.0, -0.4);
        assert!(l.is_finite());
        // but they do enter the 1/N_x normalization
        let base = flat_exceedances(&[1.0, 2.0]);
        assert!((l - gp_loglik(&base, 1.0, -0.4) * 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_exponential_scale() {
        // deterministic exponential-ish quantile spread: z_i = σ ln(1/u_i)
        let sigma = 2.0;
        let zs: Vec<f64> = (1..=200).map(|i| sigma * -((i as f64 - 0.5) / 200.0).ln()).collect();
        let exc = flat_exceedances(&zs);
        let fit = gp_fit(&exc, &GpFitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.gamma.abs() < 0.06, "gamma = {}", fit.gamma);
        assert!((fit.sigma - sigma).abs() < 0.12, "sigma = {}", fit.sigma);
        // the refinement cannot be worse than any grid seed
        let zbar: f64 = zs.iter().sum::<f64>() / zs.len() as f64;
        for gi in -9..=15 {
            let gamma = gi as f64 / 10.0;
            for si in 0..15 {
                let s = zbar.ln() + (-1.0 + 2.0 * si as f64 / 14.0) * std::f64::consts::LN_10;
                assert!(fit.loglik >= gp_loglik(&exc, s.exp(), gamma) - 1e-12);
            }
        }
    }

    #[test]
    fn fit_needs_two_weighted_exceedances() {
        let exc = flat_exceedances(&[1.0]);
        assert!(matches!(
            gp_fit(&exc, &GpFitOptions::default()),
            Err(Error::InsufficientExceedances { got: 1, need: 2 })
        ));
    }

    #[test]
    fn identical_exceedances_pin_gamma_at_floor() {
        // all excesses equal: the likelihood climbs toward the uniform
        // spike at (sigma, gamma) -> (z, -1). The gamma floor keeps it
        // finite; the fit must terminate there instead of looping
        let exc = flat_exceedances(&[1.0, 1.0, 1.0, 1.0]);
        let fit = gp_fit(&exc, &GpFitOptions::default()).unwrap();
        assert!(fit.gamma < -0.999, "gamma = {}", fit.gamma);
        assert!((fit.sigma - 1.0).abs() < 1e-3, "sigma = {}", fit.sigma);
        assert!(fit.loglik.is_finite());
        assert!(fit.iterations <= GpFitOptions::default().max_iters);
    }

    #[test]
    fn quantile_continuous_across_gamma_zero() {
        // the smooth variation in gamma is ~ln(u)^2/2 per unit, so probe
        // close enough to zero that it is far below the tolerance
        let exc = flat_exceedances(&[0.4, 0.8, 1.2, 1.6]);
        let mk = |gamma: f64| GpFit { sigma: 1.3, gamma, loglik: 0.0, converged: true, iterations: 0 };
        let q0 = gp_quantile(&mk(0.0), &exc, 0.01).unwrap();
        let qp = gp_quantile(&mk(1e-12), &exc, 0.01).unwrap();
        let qm = gp_quantile(&mk(-1e-12), &exc, 0.01).unwrap();
        assert!((q0 - qp).abs() < 1e-8 * q0.abs().max(1.0));
        assert!((q0 - qm).abs() < 1e-8 * q0.abs().max(1.0));
    }

    #[test]
    fn quantile_matches_closed_form() {
        let exc = ExceedanceSet {
            threshold: 5.0,
            excesses: vec![1.0, 2.0],
            weights: vec![1.0, 1.0],
            n_star: 20,
            k_x: 2,
        };
        let fit = GpFit { sigma: 2.0, gamma: 0.5, loglik: 0.0, converged: true, iterations: 0 };
        let beta = 0.01;
        let closed = 5.0 + 2.0 / 0.5 * ((20.0 * beta / 2.0f64).powf(-0.5) - 1.0);
        let q = gp_quantile(&fit, &exc, beta).unwrap();
        assert!((q - closed).abs() < 1e-12);
        assert!(matches!(gp_quantile(&fit, &exc, 0.0), Err(Error::BadLevel(_))));
    }
}
