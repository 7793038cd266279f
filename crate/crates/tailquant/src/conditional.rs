//! Kernel-weighted conditional survival and quantile estimation.
//!
//! The survival function at a covariate point x is estimated by
//!
//!   S_n(y|x) = Σ_i K_h(x - X_i) 1{Y_i > y} / Σ_i K_h(x - X_i)
//!
//! (strict inequality in the indicator), and the conditional quantile of
//! level α is its generalized inverse q_n(α|x) = inf{ t : S_n(t|x) ≤ α }.
//! Because the kernel has compact support, only the observations inside the
//! closed ball of radius h around x matter; [`LocalWindow`] materializes
//! that neighbourhood once so that a whole ladder of quantile levels can be
//! read off the same sorted weight profile by binary search.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// A regression sample (X_i, Y_i), i = 1..n, with X_i in R^p stored row by
/// row in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    xs: Vec<f64>,
    ys: Vec<f64>,
    p: usize,
}

impl Sample {
    /// Covariates of dimension p, flattened row-major: xs.len() = n * p.
    pub fn new(xs: Vec<f64>, p: usize, ys: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::BadSample("covariate dimension must be at least 1".into()));
        }
        if ys.is_empty() {
            return Err(Error::BadSample("sample is empty".into()));
        }
        if xs.len() != ys.len() * p {
            return Err(Error::BadSample(format!(
                "covariate buffer holds {} values, expected n*p = {}",
                xs.len(),
                ys.len() * p
            )));
        }
        if let Some(bad) = xs.iter().chain(ys.iter()).find(|v| !v.is_finite()) {
            return Err(Error::BadSample(format!("non-finite value {bad} in the sample")));
        }
        Ok(Sample { xs, ys, p })
    }

    /// One-dimensional covariates.
    pub fn univariate(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Sample::new(xs, 1, ys)
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.xs[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Covariate values of the first coordinate, ascending. Handy for
    /// bandwidth grids on univariate designs.
    pub fn sorted_x1(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.n()).map(|i| self.x_row(i)[0]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// A conditional quantile value together with a pin diagnostic.
///
/// `pinned` is true when the returned value is the in-window maximum, i.e.
/// the estimated survival function stays above alpha everywhere below the
/// largest observation, so the estimate can no longer react to smaller
/// levels. Deep-tail extrapolation from a pinned anchor is suspect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileEstimate {
    pub value: f64,
    pub pinned: bool,
}

/// The closed h-ball around one evaluation point: member indices, kernel
/// weights, and the sorted response profile needed for survival/quantile
/// lookups. Build it once per (x, h) and reuse it across levels.
#[derive(Debug, Clone)]
pub struct LocalWindow {
    h: f64,
    n_star: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
    member_ys: Vec<f64>,
    total_weight: f64,
    /// distinct responses carrying positive weight, ascending
    values: Vec<f64>,
    /// survs[k] = estimated survival at values[k] (weight fraction strictly above)
    survs: Vec<f64>,
}

impl LocalWindow {
    pub fn build(s: &Sample, kernel: &KernelSpec, h: f64, x: &[f64]) -> Result<Self> {
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
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::BadSample(format!("non-finite coordinate {bad} in evaluation point")));
        }

        let radius = h * kernel.support_radius;
        let r2 = radius * radius;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        let mut member_ys = Vec::new();
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
                indices.push(i);
                weights.push(kernel.scaled_unchecked(h, &diff));
                member_ys.push(s.y(i));
            }
        }

        let total_weight: f64 = weights.iter().sum();
        let mut pairs: Vec<(f64, f64)> = indices
            .iter()
            .zip(&weights)
            .map(|(&i, &w)| (s.y(i), w))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // merge exact ties so the survival profile is strictly decreasing
        let mut values = Vec::with_capacity(pairs.len());
        let mut merged_w = Vec::with_capacity(pairs.len());
        for (y, w) in pairs {
            if values.last() == Some(&y) {
                *merged_w.last_mut().unwrap() += w;
            } else {
                values.push(y);
                merged_w.push(w);
            }
        }
        // suffix weights, accumulated from the top so survs is exact at the max
        let m = values.len();
        let mut survs = vec![0.0; m];
        let mut acc = 0.0;
        for k in (0..m).rev() {
            survs[k] = acc / total_weight;
            acc += merged_w[k];
        }

        Ok(LocalWindow {
            h,
            n_star: indices.len(),
            indices,
            weights,
            member_ys,
            total_weight,
            values,
            survs,
        })
    }

    /// Number of observations in the closed ball (including any that sit on
    /// the boundary with zero kernel weight).
    pub fn n_star(&self) -> usize {
        self.n_star
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Sample indices of the window members, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Kernel weights aligned with [`Self::indices`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Responses aligned with [`Self::indices`].
    pub fn member_ys(&self) -> &[f64] {
        &self.member_ys
    }

    fn require_mass(&self) -> Result<()> {
        if self.total_weight > 0.0 && !self.values.is_empty() {
            Ok(())
        } else {
            Err(Error::EmptyWindow)
        }
    }

    /// Estimated conditional survival S_n(y|x) (strictly-greater version).
    pub fn survival(&self, y: f64) -> Result<f64> {
        self.require_mass()?;
        let c = self.values.partition_point(|v| *v <= y);
        Ok(if c == 0 { 1.0 } else { self.survs[c - 1] })
    }

    /// Raw kernel weight strictly above y (the survival numerator). Useful
    /// for leave-one-out corrections.
    pub fn weight_above(&self, y: f64) -> Result<f64> {
        Ok(self.survival(y)? * self.total_weight)
    }

    /// Generalized inverse q_n(α|x) = inf{ t : S_n(t|x) ≤ α }.
    pub fn quantile(&self, alpha: f64) -> Result<QuantileEstimate> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadLevel(alpha));
        }
        self.require_mass()?;
        // survs decreases strictly; find the first value where it is <= alpha.
        // The last entry is 0, so the search always succeeds.
        let idx = self.survs.partition_point(|sv| *sv > alpha);
        debug_assert!(idx < self.values.len());
        Ok(QuantileEstimate {
            value: self.values[idx],
            pinned: idx + 1 == self.values.len(),
        })
    }
}

/// Kernel density estimate of the covariate design at x:
/// g_n(x) = (1/n) Σ_i K_h(x - X_i).
pub fn density_estimate(s: &Sample, kernel: &KernelSpec, h: f64, x: &[f64]) -> Result<f64> {
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
    let mut diff = vec![0.0; s.dim()];
    let mut acc = 0.0;
    for i in 0..s.n() {
        let row = s.x_row(i);
        for (k, &xv) in x.iter().enumerate() {
            diff[k] = row[k] - xv;
        }
        acc += kernel.scaled_unchecked(h, &diff);
    }
    Ok(acc / s.n() as f64)
}

/// One-shot conditional survival estimate; builds a throwaway window.
pub fn survival_estimate(s: &Sample, kernel: &KernelSpec, h: f64, x: &[f64], y: f64) -> Result<f64> {
    LocalWindow::build(s, kernel, h, x)?.survival(y)
}

/// One-shot conditional quantile estimate; builds a throwaway window.
pub fn quantile_estimate(
    s: &Sample,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
    alpha: f64,
) -> Result<QuantileEstimate> {
    LocalWindow::build(s, kernel, h, x)?.quantile(alpha)
}
