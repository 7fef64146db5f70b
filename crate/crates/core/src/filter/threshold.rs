//! Histogram of trajectory confidences and the adaptive threshold located at
//! the rightmost local minimum of a least-squares polynomial fitted to it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FilterError;

/// Resolution of the derivative sign scan over [0, 1].
pub const GRID_STEP: f64 = 1e-3;

/// Threshold used when the fit has no interior local minimum.
pub const FALLBACK_THRESHOLD: f64 = 0.5;

/// Minima shallower than this fraction of the fitted range count as ripple.
pub const MIN_PROMINENCE: f64 = 0.05;

/// A minimum leaving less than this fraction of the confidences at or above it
/// is treated as a fitting artifact in the sparse upper tail.
pub const MIN_UPPER_FRACTION: f64 = 0.05;

const BISECTION_STEPS: usize = 60;

/// Equal-width bins over [0, 1]; the last bin includes 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl ConfidenceHistogram {
    pub fn new(confidences: &[f64], bins: usize) -> Result<Self, FilterError> {
        if bins == 0 {
            return Err(FilterError::Config("histogram bins must be >= 1".into()));
        }
        if let Some(bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(FilterError::Config(format!("confidence {bad} outside [0, 1]")));
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &c in confidences {
            counts[Self::bin_of(c, bins)] += 1;
        }
        Ok(Self {
            edges,
            counts,
            confidences: confidences.to_vec(),
        })
    }

    fn bin_of(c: f64, bins: usize) -> usize {
        ((c * bins as f64).floor() as usize).min(bins - 1)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Polynomial in `t = 2x − 1`, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub coefficients: Vec<f64>,
    /// Order actually fitted, possibly reduced to `bins − 1`.
    pub order: usize,
    pub requested_order: usize,
    pub threshold: f64,
    pub fallback: bool,
}

impl ThresholdFit {
    pub fn value(&self, x: f64) -> f64 {
        horner(&self.coefficients, 2.0 * x - 1.0)
    }

    /// d/dx of the fitted polynomial.
    pub fn derivative(&self, x: f64) -> f64 {
        let t = 2.0 * x - 1.0;
        let mut acc = 0.0;
        for (j, &c) in self.coefficients.iter().enumerate().skip(1).rev() {
            acc = acc * t + j as f64 * c;
        }
        2.0 * acc
    }

    pub fn order_reduced(&self) -> bool {
        self.order < self.requested_order
    }
}

fn horner(coefficients: &[f64], t: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Fits an order-`order` polynomial to `(bin center, count)` and returns its
/// rightmost interior local minimum that has some confidences below it, at
/// least [`MIN_UPPER_FRACTION`] of them at or above it, and a prominence of at
/// least [`MIN_PROMINENCE`] of the fitted range. Without one the threshold is 0.5 with the fallback flag.
pub fn fit_adaptive_threshold(confidences: &[f64], order: usize, bins: usize) -> Result<(ThresholdFit, ConfidenceHistogram), FilterError> {
    if confidences.is_empty() {
        return Err(FilterError::Config("no confidences to fit".into()));
    }
    let histogram = ConfidenceHistogram::new(confidences, bins)?;
    let used = order.min(bins - 1);
    let coefficients = least_squares_poly(&histogram.centers(), &histogram.counts, used);
    let mut fit = ThresholdFit {
        coefficients,
        order: used,
        requested_order: order,
        threshold: FALLBACK_THRESHOLD,
        fallback: true,
    };
    let first = confidences[0];
    let distinct = confidences.iter().any(|&c| c != first);
    if distinct {
        let lo = confidences.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = confidences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = confidences.len() as f64;
        let splits = |x: f64| {
            lo < x && x <= hi && confidences.iter().filter(|&&c| c >= x).count() as f64 >= MIN_UPPER_FRACTION * n
        };
        let significant = |x: f64| prominence(&fit, x) >= MIN_PROMINENCE * fitted_range(&fit);
        if let Some(x) = local_minima(&fit).into_iter().rev().find(|&x| splits(x) && significant(x)) {
            fit.threshold = x;
            fit.fallback = false;
        }
    }
    Ok((fit, histogram))
}

fn least_squares_poly(xs: &[f64], counts: &[usize], order: usize) -> Vec<f64> {
    let n = xs.len();
    let design = DMatrix::from_fn(n, order + 1, |i, j| (2.0 * xs[i] - 1.0).powi(j as i32));
    let rhs = DVector::from_iterator(n, counts.iter().map(|&c| c as f64));
    let svd = design.svd(true, true);
    let coef = svd
        .solve(&rhs, 1e-12)
        .expect("SVD computed with both singular vector sets");
    coef.iter().copied().collect()
}

/// Interior local minima of the fit in ascending order.
pub fn local_minima(fit: &ThresholdFit) -> Vec<f64> {
    let steps = (1.0 / GRID_STEP).round() as usize;
    let grid = |k: usize| k as f64 / steps as f64;
    let mut prev = fit.derivative(0.0);
    let mut found = Vec::new();
    for k in 1..=steps {
        let cur = fit.derivative(grid(k));
        if prev < 0.0 && cur >= 0.0 {
            let x = bisect(fit, grid(k - 1), grid(k));
            if x > 0.0 && x < 1.0 {
                found.push(x);
            }
        }
        prev = cur;
    }
    found
}

fn grid_values(fit: &ThresholdFit) -> Vec<(f64, f64)> {
    let steps = (1.0 / GRID_STEP).round() as usize;
    (0..=steps)
        .map(|k| {
            let x = k as f64 / steps as f64;
            (x, fit.value(x))
        })
        .collect()
}

/// Max minus min of the fit over [0, 1], sampled on the scan grid.
pub fn fitted_range(fit: &ThresholdFit) -> f64 {
    let values = grid_values(fit);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Depth of the dip at `x`: the lower of the highest fitted values to its
/// left and to its right, minus the value at `x`.
pub fn prominence(fit: &ThresholdFit, x: f64) -> f64 {
    let values = grid_values(fit);
    let left = values.iter().filter(|v| v.0 <= x).map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let right = values.iter().filter(|v| v.0 >= x).map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    left.min(right) - fit.value(x)
}

/// Bisection on the derivative over a bracket where it goes from − to ≥ 0.
fn bisect(fit: &ThresholdFit, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if fit.derivative(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
