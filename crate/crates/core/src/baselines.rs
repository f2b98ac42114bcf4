//! Reference interval methods: historical profiles, raw quantile heads,
//! inductive conformal prediction around the point head, and MC dropout.

use chrono::{NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{weekday_index, SeriesPanel, WindowSample};
use crate::error::{Error, Result};
use crate::forecaster::{IntervalForecast, IntervalModel, MlpForecaster};
use crate::stats::{conformal_quantile, mean_std, quantile_sorted, sort_reals};
use crate::Matrix;

const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Daily,
    Weekly,
}

impl Granularity {
    fn period_days(self) -> u32 {
        match self {
            Granularity::Daily => 1,
            Granularity::Weekly => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Per (node, slot) mean and population standard deviation, where a slot is
/// a time-of-day bucket, or a (weekday, time-of-day) bucket for weekly
/// profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalProfile {
    pub granularity: Granularity,
    pub slot_minutes: u32,
    nodes: usize,
    slots: usize,
    stats: Vec<Option<SlotStats>>,
}

impl HistoricalProfile {
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    pub fn slot_of(&self, at: NaiveDateTime) -> usize {
        let slots_per_day = (MINUTES_PER_DAY / self.slot_minutes) as usize;
        let minute = at.hour() * 60 + at.minute();
        let in_day = (minute / self.slot_minutes) as usize;
        match self.granularity {
            Granularity::Daily => in_day,
            Granularity::Weekly => weekday_index(at) as usize * slots_per_day + in_day,
        }
    }

    pub fn stats(&self, node: usize, slot: usize) -> Option<SlotStats> {
        self.stats.get(node * self.slots + slot).copied().flatten()
    }
}

/// Slot statistics over every occurrence of each slot in `panel`.
pub fn fit_profile(panel: &SeriesPanel, granularity: Granularity) -> Result<HistoricalProfile> {
    let slot_minutes = panel.interval_minutes();
    if !MINUTES_PER_DAY.is_multiple_of(slot_minutes) {
        return Err(Error::Config(format!(
            "sampling interval of {slot_minutes} minutes does not divide a day"
        )));
    }
    let period_steps = (granularity.period_days() * MINUTES_PER_DAY / slot_minutes) as usize;
    if panel.step_count() < period_steps {
        return Err(Error::InsufficientHistory {
            needed: period_steps,
            available: panel.step_count(),
        });
    }
    let mut profile = HistoricalProfile {
        granularity,
        slot_minutes,
        nodes: panel.node_count(),
        slots: period_steps,
        stats: Vec::new(),
    };
    let mut buckets = vec![Vec::new(); panel.node_count() * period_steps];
    for step in 0..panel.step_count() {
        let slot = profile.slot_of(panel.timestamp(step));
        for node in 0..panel.node_count() {
            buckets[node * period_steps + slot].push(panel.values().get(node, step));
        }
    }
    profile.stats = buckets
        .iter()
        .map(|b| {
            (!b.is_empty()).then(|| {
                let (mean, std) = mean_std(b);
                SlotStats {
                    mean,
                    std,
                    count: b.len(),
                }
            })
        })
        .collect();
    Ok(profile)
}

/// `(mu - sigma, mu, mu + sigma)` for the node's slot at `at`.
pub fn hist_interval(
    profile: &HistoricalProfile,
    node: usize,
    at: NaiveDateTime,
) -> Result<(f64, f64, f64)> {
    let slot = profile.slot_of(at);
    let s = profile
        .stats(node, slot)
        .ok_or(Error::MissingSlot { node, slot })?;
    Ok((s.mean - s.std, s.mean, s.mean + s.std))
}

/// Historical interval for every target cell of a window.
pub fn hist_forecast(
    profile: &HistoricalProfile,
    window: &WindowSample,
    horizon: usize,
) -> Result<IntervalForecast> {
    let nodes = profile.node_count();
    let mut lower = Matrix::zeros(nodes, horizon);
    let mut point = Matrix::zeros(nodes, horizon);
    let mut upper = Matrix::zeros(nodes, horizon);
    for j in 0..horizon {
        let at = window.target_timestamp(j, profile.slot_minutes);
        for node in 0..nodes {
            let (l, p, u) = hist_interval(profile, node, at)?;
            lower.set(node, j, l);
            point.set(node, j, p);
            upper.set(node, j, u);
        }
    }
    IntervalForecast::new(lower, point, upper)
}

/// Plain deep quantile regression: the finalized heads, no calibration.
pub fn dqr_interval<M: IntervalModel + ?Sized>(model: &M, input: &Matrix) -> Result<IntervalForecast> {
    model.forecast(input)
}

/// Inductive conformal prediction around the point head with one pooled
/// absolute-error quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpCalibration {
    pub q: f64,
    pub alpha: f64,
}

impl IcpCalibration {
    pub fn from_errors(abs_errors: &[f64], alpha: f64) -> Result<Self> {
        Ok(Self {
            q: conformal_quantile(abs_errors, alpha)?,
            alpha,
        })
    }

    pub fn fit<M: IntervalModel + ?Sized>(
        model: &M,
        calibration: &[WindowSample],
        alpha: f64,
    ) -> Result<Self> {
        let mut errors = Vec::new();
        for w in calibration {
            let f = model.forecast(&w.input)?;
            for (p, y) in f.point.as_slice().iter().zip(w.target.as_slice()) {
                if y.is_finite() {
                    errors.push((y - p).abs());
                }
            }
        }
        Self::from_errors(&errors, alpha)
    }

    /// `(point - q, point, point + q)` in every cell.
    pub fn interval(&self, point: &Matrix) -> IntervalForecast {
        IntervalForecast {
            lower: point.map(|p| p - self.q),
            point: point.clone(),
            upper: point.map(|p| p + self.q),
        }
    }
}

pub fn icp_interval<M: IntervalModel + ?Sized>(
    model: &M,
    calibration: &[WindowSample],
    alpha: f64,
    input: &Matrix,
) -> Result<IntervalForecast> {
    let icp = IcpCalibration::fit(model, calibration, alpha)?;
    Ok(icp.interval(&model.forecast(input)?.point))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McDropoutConfig {
    pub samples: usize,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for McDropoutConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            dropout_rate: 0.3,
            alpha: 0.1,
            seed: 0,
        }
    }
}

impl McDropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!(
                "MC dropout needs at least 2 samples, got {}",
                self.samples
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Point-head samples under dropout; bounds are the empirical `alpha / 2`
/// and `1 - alpha / 2` quantiles per cell, the point is the sample mean.
pub fn mc_dropout_interval(
    model: &MlpForecaster,
    input: &Matrix,
    cfg: &McDropoutConfig,
) -> Result<IntervalForecast> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = (0..cfg.samples)
        .map(|_| Ok(model.predict_with_dropout(input, cfg.dropout_rate, &mut rng)?.point))
        .collect::<Result<Vec<Matrix>>>()?;
    let (nodes, horizon) = draws[0].shape();
    let mut lower = Matrix::zeros(nodes, horizon);
    let mut point = Matrix::zeros(nodes, horizon);
    let mut upper = Matrix::zeros(nodes, horizon);
    let mut cell = vec![0.0; cfg.samples];
    for node in 0..nodes {
        for j in 0..horizon {
            for (slot, d) in cell.iter_mut().zip(&draws) {
                *slot = d.get(node, j);
            }
            point.set(node, j, cell.iter().sum::<f64>() / cfg.samples as f64);
            sort_reals(&mut cell);
            lower.set(node, j, quantile_sorted(&cell, cfg.alpha / 2.0));
            upper.set(node, j, quantile_sorted(&cell, 1.0 - cfg.alpha / 2.0));
        }
    }
    IntervalForecast::new(lower, point, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::step_epoch;
    use crate::forecaster::{MlpArchitecture, QuantileLevels};
    use rand::Rng;

    fn panel(values: Vec<f64>, nodes: usize, interval: u32) -> SeriesPanel {
        let steps = values.len() / nodes;
        let ids = (0..nodes).map(|i| format!("n{i}")).collect();
        SeriesPanel::new(
            ids,
            Matrix::from_vec(nodes, steps, values).unwrap(),
            step_epoch(),
            interval,
        )
        .unwrap()
    }

    #[test]
    fn constant_panel_has_zero_spread() {
        let p = panel(vec![7.0; 2 * 48], 2, 60);
        let profile = fit_profile(&p, Granularity::Daily).unwrap();
        assert_eq!(profile.slot_count(), 24);
        for node in 0..2 {
            for slot in 0..24 {
                let s = profile.stats(node, slot).unwrap();
                assert_eq!((s.mean, s.std, s.count), (7.0, 0.0, 2));
            }
        }
        assert_eq!(hist_interval(&profile, 1, step_epoch()).unwrap(), (7.0, 7.0, 7.0));
    }

    #[test]
    fn two_point_slot_uses_population_std() {
        // Two days of hourly data; slot 0 sees 4 then 6.
        let mut values = vec![0.0; 48];
        values[0] = 4.0;
        values[24] = 6.0;
        let profile = fit_profile(&panel(values, 1, 60), Granularity::Daily).unwrap();
        let s = profile.stats(0, 0).unwrap();
        assert_eq!((s.mean, s.std), (5.0, 1.0));
        assert_eq!(hist_interval(&profile, 0, step_epoch()).unwrap(), (4.0, 5.0, 6.0));
    }

    #[test]
    fn weekly_profile_counts_each_week() {
        let steps = 4 * 7 * 24;
        let profile = fit_profile(&panel(vec![1.0; steps], 1, 60), Granularity::Weekly).unwrap();
        assert_eq!(profile.slot_count(), 7 * 24);
        assert!((0..profile.slot_count()).all(|s| profile.stats(0, s).unwrap().count == 4));
    }

    #[test]
    fn short_history_and_absent_slots() {
        let short = panel(vec![1.0; 10], 1, 60);
        assert!(matches!(
            fit_profile(&short, Granularity::Daily),
            Err(Error::InsufficientHistory { .. })
        ));
        let mut profile = fit_profile(&panel(vec![1.0; 24], 1, 60), Granularity::Daily).unwrap();
        profile.stats[3] = None;
        let at = step_epoch() + chrono::Duration::hours(3);
        assert!(matches!(
            hist_interval(&profile, 0, at),
            Err(Error::MissingSlot { node: 0, slot: 3 })
        ));
    }

    #[test]
    fn icp_rank_and_constant_width() {
        let errors: Vec<f64> = (1..=99).map(f64::from).collect();
        let icp = IcpCalibration::from_errors(&errors, 0.1).unwrap();
        assert_eq!(icp.q, 90.0);
        let point = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let f = icp.interval(&point);
        for (l, u) in f.lower.as_slice().iter().zip(f.upper.as_slice()) {
            assert_eq!(u - l, 180.0);
        }
        let zero = IcpCalibration::from_errors(&[0.0; 12], 0.1).unwrap();
        assert_eq!(zero.interval(&point).lower, point);
        assert!(IcpCalibration::from_errors(&[], 0.1).is_err());
    }

    fn small_model(dropout: f64) -> MlpForecaster {
        let arch = MlpArchitecture {
            hidden: vec![16],
            dropout_rate: dropout,
            shared_nodes: false,
        };
        MlpForecaster::new(&arch, 2, 3, 2, QuantileLevels::default(), 4).unwrap()
    }

    #[test]
    fn mc_dropout_degenerate_and_deterministic() {
        let model = small_model(0.0);
        let input = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]).unwrap();
        let cfg = McDropoutConfig {
            dropout_rate: 0.0,
            ..McDropoutConfig::default()
        };
        let f = mc_dropout_interval(&model, &input, &cfg).unwrap();
        let exact = model.predict(&input).unwrap().point;
        for k in 0..exact.as_slice().len() {
            let p = exact.as_slice()[k];
            assert!((f.point.as_slice()[k] - p).abs() < 1e-12);
            assert_eq!(f.lower.as_slice()[k], f.upper.as_slice()[k]);
        }
        let cfg = McDropoutConfig::default();
        assert_eq!(
            mc_dropout_interval(&model, &input, &cfg).unwrap(),
            mc_dropout_interval(&model, &input, &cfg).unwrap()
        );
        let bad = McDropoutConfig {
            samples: 1,
            ..cfg
        };
        assert!(matches!(mc_dropout_interval(&model, &input, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn mc_dropout_width_grows_with_rate() {
        let model = small_model(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean_width = |rate: f64, rng: &mut ChaCha8Rng| {
            let mut total = 0.0;
            for k in 0..100 {
                let input = Matrix::from_vec(2, 3, (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .unwrap();
                let cfg = McDropoutConfig {
                    dropout_rate: rate,
                    seed: k,
                    ..McDropoutConfig::default()
                };
                let f = mc_dropout_interval(&model, &input, &cfg).unwrap();
                total += f.upper.as_slice().iter().zip(f.lower.as_slice()).map(|(u, l)| u - l).sum::<f64>();
            }
            total / 100.0
        };
        assert_eq!(mean_width(0.0, &mut rng), 0.0);
        assert!(mean_width(0.5, &mut rng) > 0.0);
    }
}
