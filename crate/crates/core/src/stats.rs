//! Order-statistic helpers shared by the calibration and baseline code.

use crate::error::{Error, Result};

/// Empirical quantile of already-sorted data at `level` in `[0, 1]`, linearly
/// interpolated between order statistics (level 0 is the minimum, level 1
/// the maximum).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn sort_reals(values: &mut [f64]) {
    values.sort_by(f64::total_cmp);
}

/// 1-based rank `ceil((1 - alpha)(n + 1))` clamped to `n`: the split-conformal
/// finite-sample quantile position.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let raw = ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Split-conformal threshold over a pool of nonconformity scores.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("empty nonconformity pool".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut sorted = scores.to_vec();
    sort_reals(&mut sorted);
    Ok(sorted[conformal_rank(sorted.len(), alpha) - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and population standard deviation (divisor `n`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    (m, var.sqrt())
}
