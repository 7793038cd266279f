//! Shared oracles for the integration tests: adaptive quadrature, an
//! independent profile-likelihood GP fitter, and small RNG helpers. These
//! deliberately avoid the library's own numerical routines so agreement is
//! evidence rather than tautology.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform draw strictly inside (0, 1).
pub fn open_unit(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal pair by the Box-Muller transform.
pub fn normal_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// Mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

// ------------------------------------------------------------ quadrature ---

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

fn adapt(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adapt(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + adapt(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` (signed if a > b) with
/// absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let f = &f;
    let (fa, fb) = (f(lo), f(hi));
    let (whole, m, fm) = simpson(f, lo, fa, hi, fb);
    sign * adapt(f, lo, fa, hi, fb, whole, m, fm, tol, 60)
}

// ------------------------------------------------- GP profile likelihood ---

/// Independent maximum-likelihood fit of a generalized Pareto sample by
/// profiling over θ = γ/σ: given θ, the index MLE is γ(θ) = mean ln(1+θz)
/// and σ(θ) = γ(θ)/θ, leaving a one-dimensional concentrated mean
/// log-likelihood ℓ(θ) = -ln(γ(θ)/θ) - γ(θ) - 1 (with the exponential limit
/// -ln(mean z) - 1 at θ = 0). The search respects the same γ >= -1 + 1e-6
/// constraint the library imposes.
///
/// Returns (sigma, gamma, mean loglik).
pub fn gp_profile_mle(z: &[f64]) -> (f64, f64, f64) {
    let n = z.len() as f64;
    let z_max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z_mean = z.iter().sum::<f64>() / n;
    assert!(z_max > 0.0, "profile MLE needs positive excesses");
    let gamma_floor = -1.0 + 1e-6;

    let gbar = |theta: f64| -> f64 {
        if theta == 0.0 {
            0.0
        } else {
            z.iter().map(|&zi| (theta * zi).ln_1p()).sum::<f64>() / n
        }
    };
    let ell = |theta: f64| -> f64 {
        let g = gbar(theta);
        if g < gamma_floor {
            return f64::NEG_INFINITY;
        }
        if theta == 0.0 || g == 0.0 {
            return -z_mean.ln() - 1.0;
        }
        let sigma = g / theta;
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        -sigma.ln() - g - 1.0
    };

    // admissible θ interval: γ(θ) is increasing, so bisect its boundary
    // values. Lower end: γ(θ) = gamma_floor; upper end: γ(θ) = 2.5 (far
    // above any index this test meets).
    let mut lo = -1.0 / z_max * (1.0 - 1e-12);
    let mut hi = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gbar(mid) < gamma_floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta_lo = hi;
    let mut hi = 1.0;
    while gbar(hi) < 2.5 && hi < 1e9 {
        hi *= 2.0;
    }
    let mut lo2 = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo2 + hi);
        if gbar(mid) < 2.5 {
            lo2 = mid;
        } else {
            hi = mid;
        }
    }
    let theta_hi = hi;

    // coarse scan, then golden-section refinement of the best bracket
    let grid = 600usize;
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let at = |i: usize| theta_lo + (theta_hi - theta_lo) * i as f64 / grid as f64;
    for i in 0..=grid {
        let v = ell(at(i));
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = at(best_i.saturating_sub(1));
    let mut b = at((best_i + 1).min(grid));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (ell(c), ell(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = ell(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = ell(d);
        }
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
    }
    let theta = 0.5 * (a + b);
    let g = gbar(theta).max(gamma_floor);
    let sigma = if theta == 0.0 || g == 0.0 { z_mean } else { g / theta };
    (sigma, g, ell(theta))
}
