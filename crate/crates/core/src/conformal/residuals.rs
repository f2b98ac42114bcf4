use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::forecaster::{forecast_windows, IntervalForecast, IntervalModel};

use super::CellGrid;

/// Signed widening needed for `[lower, upper]` to contain `y`: positive above
/// or below the interval, negative inside it.
#[inline]
pub fn nonconformity(lower: f64, upper: f64, y: f64) -> f64 {
    (lower - y).max(y - upper)
}

/// A finalized interval and the truth it was meant to cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
}

impl Observation {
    pub fn score(&self) -> f64 {
        nonconformity(self.lower, self.upper, self.truth)
    }

    pub fn is_valid(&self) -> bool {
        self.lower.is_finite()
            && self.upper.is_finite()
            && self.truth.is_finite()
            && self.lower <= self.upper
    }
}

/// Per-cell observations, one per window that had a usable truth.
pub type ObservationSet = CellGrid<Vec<Observation>>;

/// Per-cell nonconformity scores.
pub type ResidualStore = CellGrid<Vec<f64>>;

impl ResidualStore {
    pub fn from_observations(obs: &ObservationSet) -> Self {
        obs.map(|cell| cell.iter().map(Observation::score).collect())
    }
}

/// Pairs precomputed (finalized) forecasts with the windows' targets.
/// Non-finite truths are skipped, which leaves the cell short.
pub fn observations_from_forecasts(
    forecasts: &[IntervalForecast],
    windows: &[WindowSample],
) -> Result<ObservationSet> {
    if forecasts.len() != windows.len() {
        return Err(Error::Contract(format!(
            "{} forecasts for {} windows",
            forecasts.len(),
            windows.len()
        )));
    }
    let Some(first) = forecasts.first() else {
        return Err(Error::InsufficientData("no windows to observe".into()));
    };
    let (nodes, horizons) = (first.node_count(), first.horizon());
    let mut set = ObservationSet::new(nodes, horizons);
    for (f, w) in forecasts.iter().zip(windows) {
        w.target.ensure_shape(nodes, horizons, "window target")?;
        for node in 0..nodes {
            for h in 0..horizons {
                let truth = w.target.get(node, h);
                if truth.is_finite() {
                    set.get_mut(node, h).push(Observation {
                        lower: f.lower.get(node, h),
                        upper: f.upper.get(node, h),
                        truth,
                    });
                }
            }
        }
    }
    Ok(set)
}

pub fn collect_observations<M: IntervalModel + ?Sized>(
    model: &M,
    windows: &[WindowSample],
) -> Result<ObservationSet> {
    observations_from_forecasts(&forecast_windows(model, windows)?, windows)
}

/// Nonconformity scores of the model's finalized intervals on χ1.
pub fn collect_residuals<M: IntervalModel + ?Sized>(
    model: &M,
    chi1: &[WindowSample],
) -> Result<ResidualStore> {
    Ok(ResidualStore::from_observations(&collect_observations(model, chi1)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(nonconformity(4.0, 8.0, 10.0), 2.0);
        assert_eq!(nonconformity(4.0, 8.0, 6.0), -2.0);
        assert_eq!(nonconformity(4.0, 8.0, 4.0), 0.0);
        assert_eq!(nonconformity(4.0, 8.0, 1.0), 3.0);
    }

    #[test]
    fn widening_shifts_score() {
        for y in [-3.0, 0.5, 6.0, 11.0] {
            let base = nonconformity(4.0, 8.0, y);
            assert_eq!(nonconformity(4.0 - 1.5, 8.0 + 1.5, y), base - 1.5);
        }
    }
}
