use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{IntervalForecast, QuantileLevels};

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level {q} outside (0, 1)")))
    }
}

/// Pinball (quantile) loss: `q (y - ŷ)` when `y > ŷ`, else `(1 - q)(ŷ - y)`.
pub fn pinball_loss(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    Ok(pinball_unchecked(y, y_hat, q))
}

#[inline]
pub(crate) fn pinball_unchecked(y: f64, y_hat: f64, q: f64) -> f64 {
    let r = y - y_hat;
    if r > 0.0 {
        q * r
    } else {
        (1.0 - q) * -r
    }
}

/// Subgradient of the pinball loss with respect to `ŷ`: `-q` below the
/// target, `1 - q` otherwise.
#[inline]
pub fn pinball_grad(y: f64, y_hat: f64, q: f64) -> f64 {
    if y - y_hat > 0.0 {
        -q
    } else {
        1.0 - q
    }
}

/// Mean over cells of the summed pinball losses of the three heads.
pub fn composite_loss(
    forecast: &IntervalForecast,
    target: &Matrix,
    levels: &QuantileLevels,
) -> Result<f64> {
    let (rows, cols) = forecast.point.shape();
    target.ensure_shape(rows, cols, "composite loss target")?;
    let [ql, qm, qu] = levels.heads();
    let mut total = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let y = target.get(i, j);
            let (l, p, u) = forecast.cell(i, j);
            total += pinball_unchecked(y, l, ql)
                + pinball_unchecked(y, p, qm)
                + pinball_unchecked(y, u, qu);
        }
    }
    Ok(total / (rows * cols) as f64)
}
