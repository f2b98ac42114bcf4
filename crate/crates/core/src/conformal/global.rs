use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::forecaster::{IntervalForecast, IntervalModel};
use crate::stats::conformal_quantile;

use super::{collect_observations, select::widen, ObservationSet};

pub const GLOBAL_DELTA_FORMAT: &str = "adaptive-intervals/global-delta/v1";

/// One adjustment shared by every cell (conformalized quantile regression).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDelta {
    pub delta: f64,
    pub alpha_cal: f64,
}

#[derive(Serialize, Deserialize)]
struct GlobalDeltaFile {
    format: String,
    #[serde(flatten)]
    delta: GlobalDelta,
}

impl GlobalDelta {
    /// Split-conformal quantile of the pooled scores.
    pub fn from_scores(scores: &[f64], alpha_cal: f64) -> Result<Self> {
        Ok(Self {
            delta: conformal_quantile(scores, alpha_cal)?,
            alpha_cal,
        })
    }

    pub fn from_observations(obs: &ObservationSet, alpha_cal: f64) -> Result<Self> {
        let scores: Vec<f64> = obs.iter().flatten().map(|o| o.score()).collect();
        Self::from_scores(&scores, alpha_cal)
    }

    /// Widens every interval by `delta` (with the crossed-interval collapse).
    pub fn apply(&self, f: &IntervalForecast) -> IntervalForecast {
        let mut out = f.clone();
        for node in 0..f.node_count() {
            for h in 0..f.horizon() {
                let (lo, hi) = widen(f.lower.get(node, h), f.upper.get(node, h), self.delta);
                out.lower.set(node, h, lo);
                out.upper.set(node, h, hi);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = GlobalDeltaFile {
            format: GLOBAL_DELTA_FORMAT.into(),
            delta: *self,
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let file: GlobalDeltaFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != GLOBAL_DELTA_FORMAT {
            return Err(Error::Format {
                expected: GLOBAL_DELTA_FORMAT.into(),
                found: file.format,
            });
        }
        Ok(file.delta)
    }
}

/// Pools the nonconformity scores of every node, horizon and calibration
/// window and takes the `ceil((1 - alpha)(n + 1))`-th smallest.
pub fn fit_global_delta<M: IntervalModel + ?Sized>(
    model: &M,
    calibration: &[WindowSample],
    alpha_cal: f64,
) -> Result<GlobalDelta> {
    GlobalDelta::from_observations(&collect_observations(model, calibration)?, alpha_cal)
}
