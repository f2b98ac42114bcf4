use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sort_reals};

use super::{CellGrid, ResidualStore};

/// `m` residual percentiles at levels `(k - 1) / (m - 1)`, from the minimum
/// to the maximum score.
pub fn percentile_candidates(scores: &[f64], m: usize) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sort_reals(&mut sorted);
    (0..m)
        .map(|k| quantile_sorted(&sorted, k as f64 / (m - 1) as f64))
        .collect()
}

/// `bins` evenly spaced values from the minimum to the maximum score.
pub fn grid_candidates(scores: &[f64], bins: usize) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = (max - min) / (bins - 1) as f64;
    (0..bins)
        .map(|k| if k + 1 == bins { max } else { min + step * k as f64 })
        .collect()
}

/// Sorted candidate adjustments per cell; `None` where a cell had no scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileCandidates {
    pub count: usize,
    pub cells: CellGrid<Option<Vec<f64>>>,
}

impl PercentileCandidates {
    pub fn get(&self, node: usize, horizon: usize) -> Option<&[f64]> {
        self.cells.get(node, horizon).as_deref()
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

fn build(
    store: &ResidualStore,
    count: usize,
    f: fn(&[f64], usize) -> Vec<f64>,
) -> Result<PercentileCandidates> {
    if count < 2 {
        return Err(Error::Config(format!("need at least 2 candidates, got {count}")));
    }
    Ok(PercentileCandidates {
        count,
        cells: store.map(|scores| (!scores.is_empty()).then(|| f(scores, count))),
    })
}

pub fn build_percentiles(store: &ResidualStore, m: usize) -> Result<PercentileCandidates> {
    build(store, m, percentile_candidates)
}

pub fn build_grid_candidates(store: &ResidualStore, bins: usize) -> Result<PercentileCandidates> {
    build(store, bins, grid_candidates)
}
