//! Base forecasters producing (lower, point, upper) forecasts per node and
//! horizon.

mod loss;
mod mlp;
mod naive;
mod train;

pub use loss::{composite_loss, pinball_grad, pinball_loss};
pub use mlp::{Dense, MlpArchitecture, MlpForecaster, Normalizer, CHECKPOINT_FORMAT};
pub use naive::{seasonal_naive_forecast, seasonal_naive_predict};
pub use train::{train, Adam, LossHistory, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Quantile levels derived from the training mis-coverage rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevels", into = "RawLevels")]
pub struct QuantileLevels {
    alpha_tra: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLevels {
    alpha_tra: f64,
}

impl TryFrom<RawLevels> for QuantileLevels {
    type Error = Error;

    fn try_from(raw: RawLevels) -> Result<Self> {
        Self::new(raw.alpha_tra)
    }
}

impl From<QuantileLevels> for RawLevels {
    fn from(levels: QuantileLevels) -> Self {
        Self {
            alpha_tra: levels.alpha_tra,
        }
    }
}

impl QuantileLevels {
    pub fn new(alpha_tra: f64) -> Result<Self> {
        if !(alpha_tra > 0.0 && alpha_tra < 1.0) {
            return Err(Error::Domain(format!(
                "training mis-coverage rate {alpha_tra} outside (0, 1)"
            )));
        }
        Ok(Self { alpha_tra })
    }

    pub fn alpha_tra(&self) -> f64 {
        self.alpha_tra
    }

    pub fn lower_q(&self) -> f64 {
        self.alpha_tra / 2.0
    }

    pub fn median_q(&self) -> f64 {
        0.5
    }

    pub fn upper_q(&self) -> f64 {
        1.0 - self.alpha_tra / 2.0
    }

    /// Levels for the lower, point and upper heads, in output order.
    pub fn heads(&self) -> [f64; 3] {
        [self.lower_q(), self.median_q(), self.upper_q()]
    }
}

impl Default for QuantileLevels {
    fn default() -> Self {
        Self { alpha_tra: 0.1 }
    }
}

/// Lower, point and upper forecasts, each `[N x h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub lower: Matrix,
    pub point: Matrix,
    pub upper: Matrix,
}

impl IntervalForecast {
    pub fn new(lower: Matrix, point: Matrix, upper: Matrix) -> Result<Self> {
        let shape = point.shape();
        if lower.shape() != shape || upper.shape() != shape {
            return Err(Error::Contract("interval heads differ in shape".into()));
        }
        Ok(Self {
            lower,
            point,
            upper,
        })
    }

    pub fn node_count(&self) -> usize {
        self.point.rows()
    }

    pub fn horizon(&self) -> usize {
        self.point.cols()
    }

    /// `(lower, point, upper)` of one cell.
    pub fn cell(&self, node: usize, step: usize) -> (f64, f64, f64) {
        (
            self.lower.get(node, step),
            self.point.get(node, step),
            self.upper.get(node, step),
        )
    }
}

/// Sorts the three head values of every cell so that lower <= point <= upper.
pub fn finalize_interval(f: &IntervalForecast) -> IntervalForecast {
    let mut out = f.clone();
    for node in 0..f.node_count() {
        for step in 0..f.horizon() {
            let (l, p, u) = f.cell(node, step);
            let mut v = [l, p, u];
            v.sort_by(f64::total_cmp);
            out.lower.set(node, step, v[0]);
            out.point.set(node, step, v[1]);
            out.upper.set(node, step, v[2]);
        }
    }
    out
}

/// Anything that maps an `[N x m]` input window to an interval forecast.
pub trait IntervalModel {
    fn node_count(&self) -> usize;
    fn input_steps(&self) -> usize;
    fn horizon(&self) -> usize;

    /// Head outputs as produced, possibly crossed.
    fn predict_raw(&self, input: &Matrix) -> Result<IntervalForecast>;

    /// Head outputs after [`finalize_interval`].
    fn forecast(&self, input: &Matrix) -> Result<IntervalForecast> {
        Ok(finalize_interval(&self.predict_raw(input)?))
    }
}

/// Finalized forecasts for every window, in order.
pub fn forecast_windows<M: IntervalModel + ?Sized>(
    model: &M,
    windows: &[WindowSample],
) -> Result<Vec<IntervalForecast>> {
    windows.iter().map(|w| model.forecast(&w.input)).collect()
}
