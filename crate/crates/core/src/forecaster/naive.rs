use crate::dataset::SeriesPanel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Seasonal-naive forecast `steps_ahead` (>= 1) steps past the end of
/// `history`: the value observed `period` steps before the target. Targets
/// further out than one period reuse the last observed season.
pub fn seasonal_naive_predict(history: &[f64], period: usize, steps_ahead: usize) -> Result<f64> {
    if period == 0 || steps_ahead == 0 {
        return Err(Error::Config("period and steps ahead must be positive".into()));
    }
    if history.len() < period {
        return Err(Error::InsufficientHistory {
            needed: period,
            available: history.len(),
        });
    }
    // target index (relative to history start) is len - 1 + steps_ahead
    let seasons_back = steps_ahead.div_ceil(period);
    let index = history.len() - 1 + steps_ahead - seasons_back * period;
    Ok(history[index])
}

/// `[N x h]` seasonal-naive point forecast from the panel up to and including
/// step `anchor`.
pub fn seasonal_naive_forecast(
    panel: &SeriesPanel,
    anchor: usize,
    horizon: usize,
    period: usize,
) -> Result<Matrix> {
    if anchor >= panel.step_count() {
        return Err(Error::Contract(format!("anchor {anchor} outside panel")));
    }
    let mut out = Matrix::zeros(panel.node_count(), horizon);
    for node in 0..panel.node_count() {
        let history = &panel.series(node)[..=anchor];
        for step in 0..horizon {
            out.set(node, step, seasonal_naive_predict(history, period, step + 1)?);
        }
    }
    Ok(out)
}
