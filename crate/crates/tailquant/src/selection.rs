//! Data-driven choice of the smoothing parameters: cross-validated and
//! Yu–Jones bandwidths for the conditional survival estimator, and the
//! stability rules that pick the sample fraction k (hence α_n = k/n*) either
//! separately or jointly with h.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::conditional::{LocalWindow, Sample};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// A bandwidth grid plus the length of the sliding h-window used by the
/// simultaneous rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionGrid {
    h_values: Vec<f64>,
    h_window: usize,
}

pub(crate) fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

impl SelectionGrid {
    /// Ascending positive bandwidths; the h-window defaults to 10.
    pub fn new(h_values: Vec<f64>) -> Result<Self> {
        if h_values.is_empty() {
            return Err(Error::BadConfig("bandwidth grid is empty".into()));
        }
        for (i, &h) in h_values.iter().enumerate() {
            if !h.is_finite() || h <= 0.0 {
                return Err(Error::BadBandwidth(h));
            }
            if i > 0 && h <= h_values[i - 1] {
                return Err(Error::BadConfig("bandwidth grid must increase strictly".into()));
            }
        }
        Ok(SelectionGrid { h_values, h_window: 10 })
    }

    pub fn with_h_window(mut self, w: usize) -> Result<Self> {
        if w < 2 {
            return Err(Error::BadConfig(format!("h-window must be at least 2, got {w}")));
        }
        self.h_window = w;
        Ok(self)
    }

    /// Evenly spaced grid between h_min = max consecutive design gap and
    /// h_max = design range / `denominator` (2 reproduces the Monte Carlo
    /// convention, 4 the selection convention). Univariate designs only.
    pub fn from_design_range(s: &Sample, points: usize, denominator: f64) -> Result<Self> {
        if s.dim() != 1 {
            return Err(Error::BadConfig("design-range grids need univariate covariates".into()));
        }
        if points == 0 || !(denominator > 0.0) {
            return Err(Error::BadConfig("need a positive grid size and denominator".into()));
        }
        let sorted = s.sorted_x1();
        let n = sorted.len();
        if n < 2 {
            return Err(Error::BadConfig("need at least two design points".into()));
        }
        let h_min = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        let h_max = (sorted[n - 1] - sorted[0]) / denominator;
        if !(h_min > 0.0) || h_max <= h_min {
            return Err(Error::SelectionFailed(format!(
                "degenerate bandwidth range [{h_min}, {h_max}]"
            )));
        }
        SelectionGrid::new(linspace(h_min, h_max, points))
    }

    /// The refined grid used around a cross-validated bandwidth:
    /// `points` values between min(h_cv, h_yj - h_cv) and h_yj + 2 h_cv.
    /// `h_floor` (typically the largest design gap) keeps the lower end from
    /// producing empty windows; when the bound is still not positive it is
    /// floored at a thousandth of the upper bound.
    pub fn refined(h_cv: f64, h_yj: f64, points: usize, h_floor: Option<f64>) -> Result<Self> {
        if !(h_cv > 0.0) || !(h_yj > 0.0) {
            return Err(Error::BadBandwidth(h_cv.min(h_yj)));
        }
        let hi = h_yj + 2.0 * h_cv;
        let mut lo = h_cv.min(h_yj - h_cv);
        if let Some(f) = h_floor {
            lo = lo.max(f);
        }
        if lo <= 0.0 {
            lo = hi / 1000.0;
        }
        if lo >= hi {
            return Err(Error::SelectionFailed(format!(
                "refined bandwidth range [{lo}, {hi}] is empty"
            )));
        }
        SelectionGrid::new(linspace(lo, hi, points))
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    pub fn h_window(&self) -> usize {
        self.h_window
    }
}

/// Outcome of the cross-validation scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection {
    pub h_cv: f64,
    /// criterion value at h_cv
    pub criterion: f64,
    /// per-bandwidth diagnostics, aligned with the grid
    pub scores: Vec<CvScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub h: f64,
    /// None when every pair was skipped at this bandwidth
    pub criterion: Option<f64>,
    /// pairs dropped because the leave-one-out window had no mass
    pub skipped_pairs: usize,
}

/// Leave-one-out cross-validation for the bandwidth of the conditional
/// survival estimator:
///
///   CV(h) = Σ_i Σ_j { 1(Y_i ≥ Y_j) - S_(n,-i)(Y_j | X_i) }²,
///
/// including i = j. Pairs whose leave-one-out window carries no weight are
/// skipped and counted; a bandwidth where every pair is skipped is excluded.
/// Ties in the argmin resolve to the smallest h.
pub fn cv_bandwidth(s: &Sample, kernel: &KernelSpec, grid: &SelectionGrid) -> Result<CvSelection> {
    let n = s.n();
    if n < 3 {
        return Err(Error::BadSample(format!(
            "cross-validation needs at least 3 observations, got {n}"
        )));
    }
    let ys = s.ys();
    // the self-weight K_h(0) is the same for every i at a given h
    let zero = vec![0.0; s.dim()];
    let mut scores = Vec::with_capacity(grid.h_values().len());
    let mut best: Option<(f64, f64)> = None;

    for &h in grid.h_values() {
        let w_self = kernel.scaled_unchecked(h, &zero);
        let mut total = 0.0;
        let mut skipped = 0usize;
        for i in 0..n {
            let window = LocalWindow::build(s, kernel, h, s.x_row(i))?;
            let w_loo = window.total_weight() - w_self;
            if w_loo <= 0.0 {
                skipped += n;
                continue;
            }
            let yi = ys[i];
            for &yj in ys {
                // survival of the sample without i, evaluated at (y_j | x_i):
                // remove the self weight from the strictly-above mass
                let above = window.weight_above(yj)?;
                let corrected = if yi > yj { above - w_self } else { above };
                let s_loo = corrected.max(0.0) / w_loo;
                let ind = if yi >= yj { 1.0 } else { 0.0 };
                let term = ind - s_loo;
                total += term * term;
            }
        }
        let criterion = if skipped == n * n { None } else { Some(total) };
        if let Some(c) = criterion {
            if best.map_or(true, |(_, bc)| c < bc) {
                best = Some((h, c));
            }
        }
        scores.push(CvScore { h, criterion, skipped_pairs: skipped });
    }

    match best {
        Some((h_cv, criterion)) => Ok(CvSelection { h_cv, criterion, scores }),
        None => Err(Error::SelectionFailed(
            "every bandwidth in the grid left all leave-one-out windows empty".into(),
        )),
    }
}

/// The Yu–Jones level adjustment factor (β(1-β) / φ(Φ⁻¹(β))²)^(1/5).
///
/// Symmetric in β ↔ 1-β; equals (π/2)^(1/5) at β = 1/2.
pub fn yu_jones_factor(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BadLevel(beta));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let q = normal.inverse_cdf(beta);
    // φ(q)² = e^(-q²) / (2π)
    let phi_sq = (-q * q).exp() / std::f64::consts::TAU;
    Ok((beta * (1.0 - beta) / phi_sq).powf(0.2))
}

/// Level-adjusted global bandwidth h_yj = h_cv (β(1-β)/φ(Φ⁻¹(β))²)^(1/5).
pub fn yu_jones_bandwidth(h_cv: f64, beta: f64) -> Result<f64> {
    if !h_cv.is_finite() || h_cv <= 0.0 {
        return Err(Error::BadBandwidth(h_cv));
    }
    Ok(h_cv * yu_jones_factor(beta)?)
}

/// Result of the k-stability rule at a fixed bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    /// first k of the most stable window
    pub k: usize,
    /// the estimate at that k
    pub estimate: f64,
    /// sample standard deviation over the winning window
    pub score: f64,
}

fn sample_std(vals: &[f64]) -> f64 {
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Slide a window of `window` consecutive k values over `k_lo..=k_hi`,
/// score each window by the sample standard deviation of the estimates, and
/// return the first k of the most stable window (ties toward smaller k).
///
/// `estimate_at` returns None where the estimator is degenerate; windows
/// containing any such k are invalid. The reported estimate is the one at
/// the returned k.
pub fn select_k_separate(
    mut estimate_at: impl FnMut(usize) -> Option<f64>,
    k_lo: usize,
    k_hi: usize,
    window: usize,
) -> Result<KSelection> {
    if window < 2 {
        return Err(Error::BadConfig(format!("k-window must be at least 2, got {window}")));
    }
    if k_lo == 0 || k_hi < k_lo {
        return Err(Error::BadConfig(format!("bad k range {k_lo}..={k_hi}")));
    }
    let count = k_hi - k_lo + 1;
    if count < window {
        return Err(Error::SelectionFailed(format!(
            "k range holds {count} values, smaller than the window {window}"
        )));
    }
    let vals: Vec<Option<f64>> = (k_lo..=k_hi).map(&mut estimate_at).collect();
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=count - window {
        let slice = &vals[start..start + window];
        if slice.iter().any(|v| v.is_none()) {
            continue;
        }
        let w: Vec<f64> = slice.iter().map(|v| v.unwrap()).collect();
        let score = sample_std(&w);
        if best.map_or(true, |(_, b)| score < b) {
            best = Some((start, score));
        }
    }
    match best {
        Some((start, score)) => Ok(KSelection {
            k: k_lo + start,
            estimate: vals[start].unwrap(),
            score,
        }),
        None => Err(Error::SelectionFailed(
            "no window of consecutive k values was free of degenerate estimates".into(),
        )),
    }
}

/// Per-bandwidth record kept by the simultaneous rule.
#[derive(Debug, Clone, PartialEq)]
pub struct HTrace {
    pub h: f64,
    pub n_star: usize,
    /// the k-stage outcome at this h
    pub outcome: Result<KSelection>,
}

/// Outcome of the simultaneous (h, k) rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub h_selected: f64,
    pub k_selected: usize,
    pub estimate: f64,
    /// standard deviation over the winning h-window
    pub stability_score: f64,
    /// k-stage score at the selected bandwidth
    pub k_score: f64,
    pub trace: Vec<HTrace>,
}

/// Simultaneous selection: for every h in the grid run the k-stability rule
/// with the conventions k in 1..=n*-1 and k-window floor(sqrt(n*)), then
/// slide a window of `grid.h_window()` values over the successive *usable*
/// bandwidths and keep the one whose estimates vary least. Ties resolve to
/// the smallest h. The returned estimate is the one at (h, k_h).
pub fn select_hk_simultaneous(
    mut estimate_at: impl FnMut(f64, usize) -> Option<f64>,
    mut n_star_at: impl FnMut(f64) -> usize,
    grid: &SelectionGrid,
) -> Result<SelectionResult> {
    let mut trace = Vec::with_capacity(grid.h_values().len());
    for &h in grid.h_values() {
        let n_star = n_star_at(h);
        let outcome = if n_star < 2 {
            Err(Error::SelectionFailed(format!("window at h = {h} holds {n_star} points")))
        } else {
            let window = n_star.isqrt();
            if window < 2 {
                Err(Error::SelectionFailed(format!(
                    "k-window floor(sqrt({n_star})) is below 2 at h = {h}"
                )))
            } else {
                select_k_separate(|k| estimate_at(h, k), 1, n_star - 1, window)
            }
        };
        trace.push(HTrace { h, n_star, outcome });
    }

    let usable: Vec<(usize, &KSelection)> = trace
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.outcome.as_ref().ok().map(|k| (i, k)))
        .collect();
    let w = grid.h_window();
    if usable.len() < w {
        return Err(Error::SelectionFailed(format!(
            "only {} usable bandwidths, the h-window needs {w}",
            usable.len()
        )));
    }

    let mut best: Option<(usize, f64)> = None;
    for start in 0..=usable.len() - w {
        let vals: Vec<f64> = usable[start..start + w].iter().map(|(_, k)| k.estimate).collect();
        let score = sample_std(&vals);
        if best.map_or(true, |(_, b)| score < b) {
            best = Some((start, score));
        }
    }
    let (start, stability_score) = best.unwrap();
    let (idx, ksel) = usable[start];
    Ok(SelectionResult {
        h_selected: trace[idx].h,
        k_selected: ksel.k,
        estimate: ksel.estimate,
        stability_score,
        k_score: ksel.score,
        trace,
    })
}
