use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::forecaster::{IntervalForecast, IntervalModel};

use super::candidates::{grid_candidates, percentile_candidates};
use super::select::{select_cell_delta, widen, width_normalizer, SelectionObjective};
use super::{collect_observations, CellGrid, GlobalDelta, Observation, ObservationSet};

pub const TABLE_FORMAT: &str = "adaptive-intervals/calibration-table/v1";

/// How candidate adjustments are proposed from a cell's χ1 scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSearch {
    /// Residual percentiles (equal-count groups).
    #[default]
    Quantile,
    /// Evenly spaced values between the smallest and largest score.
    Grid,
}

/// Coverage term of the selection objective, see [`SelectionObjective`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageCredit {
    /// Coverage as is.
    Raw,
    /// Coverage capped at `1 - alpha_target`, in units of `alpha_target`.
    #[default]
    CappedAtTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableParams {
    pub lambda: f64,
    /// Number of candidates per cell (`m`, or the bin count for grid search).
    pub candidates: usize,
    pub alpha_target: f64,
    pub search: CandidateSearch,
    pub credit: CoverageCredit,
}

impl Default for TableParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            candidates: 100,
            alpha_target: 0.1,
            search: CandidateSearch::Quantile,
            credit: CoverageCredit::CappedAtTarget,
        }
    }
}

impl TableParams {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 2 {
            return Err(Error::Config(format!(
                "need at least 2 candidates per cell, got {}",
                self.candidates
            )));
        }
        if !(self.alpha_target > 0.0 && self.alpha_target < 1.0) {
            return Err(Error::Config(format!(
                "alpha_target {} outside (0, 1)",
                self.alpha_target
            )));
        }
        self.objective().validate()
    }

    pub fn objective(&self) -> SelectionObjective {
        match self.credit {
            CoverageCredit::Raw => SelectionObjective::raw(self.lambda),
            CoverageCredit::CappedAtTarget => {
                SelectionObjective::with_target(self.lambda, 1.0 - self.alpha_target)
            }
        }
    }

    fn candidates_for(&self, scores: &[f64]) -> Vec<f64> {
        match self.search {
            CandidateSearch::Quantile => percentile_candidates(scores, self.candidates),
            CandidateSearch::Grid => grid_candidates(scores, self.candidates),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildMetadata {
    pub seed: Option<u64>,
    pub chi1_windows: usize,
    pub chi2_windows: usize,
    pub missing_cells: usize,
    /// Observations accepted by [`update_table`] since the build.
    pub updates: usize,
    /// Malformed observations skipped by [`update_table`].
    pub skipped: usize,
}

/// Data behind one cell: χ1-role scores and the χ2-role recent observations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    pub pool: Vec<f64>,
    pub recent: VecDeque<Observation>,
}

impl CellState {
    fn select(&self, params: &TableParams) -> Option<(f64, f64)> {
        if self.pool.is_empty() || self.recent.is_empty() {
            return None;
        }
        let chi2: Vec<Observation> = self.recent.iter().copied().collect();
        let candidates = params.candidates_for(&self.pool);
        let pick = select_cell_delta(&candidates, &chi2, &params.objective()).ok()?;
        Some((pick.delta, width_normalizer(&chi2)))
    }
}

/// Per-cell adjustments `δ` with the data they were selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    params: TableParams,
    delta: CellGrid<Option<f64>>,
    width_normalizer: CellGrid<Option<f64>>,
    metadata: BuildMetadata,
    state: CellGrid<CellState>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format: String,
    nodes: usize,
    horizons: usize,
    lambda: f64,
    m: usize,
    alpha_target: f64,
    search: CandidateSearch,
    credit: CoverageCredit,
    /// One `0`/`1` character per cell, node-major.
    presence: String,
    /// Node-major; absent cells hold 0.
    delta: Vec<f64>,
    width_normalizer: Vec<f64>,
    metadata: BuildMetadata,
    state: CellGrid<CellState>,
}

impl CalibrationTable {
    /// A table with no data; every cell absent.
    pub fn empty(nodes: usize, horizons: usize, params: TableParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            delta: CellGrid::new(nodes, horizons),
            width_normalizer: CellGrid::new(nodes, horizons),
            metadata: BuildMetadata {
                missing_cells: nodes * horizons,
                ..BuildMetadata::default()
            },
            state: CellGrid::new(nodes, horizons),
        })
    }

    /// Builds from already-collected χ1 and χ2 observations.
    pub fn from_observations(
        chi1: &ObservationSet,
        chi2: &ObservationSet,
        params: TableParams,
    ) -> Result<Self> {
        params.validate()?;
        if (chi1.nodes(), chi1.horizons()) != (chi2.nodes(), chi2.horizons()) {
            return Err(Error::Contract("χ1 and χ2 cover different grids".into()));
        }
        let state = CellGrid::from_fn(chi1.nodes(), chi1.horizons(), |n, h| CellState {
            pool: chi1.get(n, h).iter().map(Observation::score).collect(),
            recent: chi2.get(n, h).iter().copied().collect(),
        });
        let mut table = Self {
            params,
            delta: CellGrid::new(chi1.nodes(), chi1.horizons()),
            width_normalizer: CellGrid::new(chi1.nodes(), chi1.horizons()),
            metadata: BuildMetadata::default(),
            state,
        };
        for n in 0..table.nodes() {
            for h in 0..table.horizons() {
                table.reselect(n, h);
            }
        }
        table.metadata.missing_cells = table.missing_cells();
        if table.present_cells() == 0 {
            return Err(Error::EmptyTable);
        }
        Ok(table)
    }

    fn reselect(&mut self, node: usize, horizon: usize) {
        let picked = self.state.get(node, horizon).select(&self.params);
        *self.delta.get_mut(node, horizon) = picked.map(|p| p.0);
        *self.width_normalizer.get_mut(node, horizon) = picked.map(|p| p.1);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.metadata.seed = Some(seed);
        self
    }

    pub fn nodes(&self) -> usize {
        self.delta.nodes()
    }

    pub fn horizons(&self) -> usize {
        self.delta.horizons()
    }

    pub fn params(&self) -> &TableParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn m(&self) -> usize {
        self.params.candidates
    }

    pub fn alpha_target(&self) -> f64 {
        self.params.alpha_target
    }

    pub fn metadata(&self) -> &BuildMetadata {
        &self.metadata
    }

    pub fn state(&self) -> &CellGrid<CellState> {
        &self.state
    }

    pub fn delta(&self, node: usize, horizon: usize) -> Option<f64> {
        *self.delta.get(node, horizon)
    }

    pub fn deltas(&self) -> &CellGrid<Option<f64>> {
        &self.delta
    }

    pub fn width_normalizer(&self, node: usize, horizon: usize) -> Option<f64> {
        *self.width_normalizer.get(node, horizon)
    }

    pub fn present_cells(&self) -> usize {
        self.delta.iter().filter(|d| d.is_some()).count()
    }

    pub fn missing_cells(&self) -> usize {
        self.delta.len() - self.present_cells()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = TableFile {
            format: TABLE_FORMAT.into(),
            nodes: self.nodes(),
            horizons: self.horizons(),
            lambda: self.params.lambda,
            m: self.params.candidates,
            alpha_target: self.params.alpha_target,
            search: self.params.search,
            credit: self.params.credit,
            presence: self
                .delta
                .iter()
                .map(|d| if d.is_some() { '1' } else { '0' })
                .collect(),
            delta: self.delta.iter().map(|d| d.unwrap_or(0.0)).collect(),
            width_normalizer: self
                .width_normalizer
                .iter()
                .map(|w| w.unwrap_or(0.0))
                .collect(),
            metadata: self.metadata.clone(),
            state: self.state.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let file: TableFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != TABLE_FORMAT {
            return Err(Error::Format {
                expected: TABLE_FORMAT.into(),
                found: file.format,
            });
        }
        let cells = file.nodes * file.horizons;
        if file.presence.len() != cells
            || file.delta.len() != cells
            || file.width_normalizer.len() != cells
            || file.state.nodes() != file.nodes
            || file.state.horizons() != file.horizons
        {
            return Err(Error::Schema(format!(
                "table arrays do not match a {}x{} grid",
                file.nodes, file.horizons
            )));
        }
        let present: Vec<bool> = file
            .presence
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Schema(format!("bad presence flag {other:?}"))),
            })
            .collect::<Result<_>>()?;
        let pick = |values: &[f64], k: usize| present[k].then_some(values[k]);
        let params = TableParams {
            lambda: file.lambda,
            candidates: file.m,
            alpha_target: file.alpha_target,
            search: file.search,
            credit: file.credit,
        };
        params.validate()?;
        Ok(Self {
            params,
            delta: CellGrid::from_fn(file.nodes, file.horizons, |n, h| {
                pick(&file.delta, n * file.horizons + h)
            }),
            width_normalizer: CellGrid::from_fn(file.nodes, file.horizons, |n, h| {
                pick(&file.width_normalizer, n * file.horizons + h)
            }),
            metadata: file.metadata,
            state: file.state,
        })
    }
}

/// Collects χ1 and χ2 observations from the model and builds the table.
pub fn build_table<M: IntervalModel + ?Sized>(
    model: &M,
    chi1: &[WindowSample],
    chi2: &[WindowSample],
    params: TableParams,
) -> Result<CalibrationTable> {
    if chi1.is_empty() || chi2.is_empty() {
        return Err(Error::InsufficientData("χ1 and χ2 must both be non-empty".into()));
    }
    let mut table = CalibrationTable::from_observations(
        &collect_observations(model, chi1)?,
        &collect_observations(model, chi2)?,
        params,
    )?;
    table.metadata.chi1_windows = chi1.len();
    table.metadata.chi2_windows = chi2.len();
    Ok(table)
}

/// [`build_table`] with `bins` evenly spaced candidates per cell.
pub fn build_table_grid<M: IntervalModel + ?Sized>(
    model: &M,
    chi1: &[WindowSample],
    chi2: &[WindowSample],
    bins: usize,
    params: TableParams,
) -> Result<CalibrationTable> {
    let params = TableParams {
        candidates: bins,
        search: CandidateSearch::Grid,
        ..params
    };
    build_table(model, chi1, chi2, params)
}

/// What to do with cells the table has no adjustment for.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fallback {
    #[default]
    Unchanged,
    Global(GlobalDelta),
}

/// Widens each cell by its table entry; the point forecast is untouched.
pub fn apply_adjustment(
    f: &IntervalForecast,
    table: &CalibrationTable,
    fallback: Fallback,
) -> Result<IntervalForecast> {
    if (f.node_count(), f.horizon()) != (table.nodes(), table.horizons()) {
        return Err(Error::Contract(format!(
            "forecast is {}x{}, table is {}x{}",
            f.node_count(),
            f.horizon(),
            table.nodes(),
            table.horizons()
        )));
    }
    let mut out = f.clone();
    for node in 0..f.node_count() {
        for h in 0..f.horizon() {
            let delta = match (table.delta(node, h), fallback) {
                (Some(d), _) => d,
                (None, Fallback::Global(g)) => g.delta,
                (None, Fallback::Unchanged) => continue,
            };
            let (lo, hi) = widen(f.lower.get(node, h), f.upper.get(node, h), delta);
            out.lower.set(node, h, lo);
            out.upper.set(node, h, hi);
        }
    }
    Ok(out)
}

/// A recorded (unadjusted) interval and its realized truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellObservation {
    pub node: usize,
    pub horizon: usize,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
}

/// Online refresh: each cell keeps its `window` most recent observations as
/// the selection set; older ones move into the score pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshPolicy {
    pub window: usize,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        Self { window: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub accepted: usize,
    pub skipped: usize,
    pub reselected_cells: usize,
    pub newly_present: usize,
}

/// Feeds new observations into the table and re-selects the touched cells.
///
/// An observation goes to the score pool while the cell's pool is empty and
/// to the recent buffer otherwise; when the buffer outgrows the window its
/// oldest entry moves to the pool. Replaying χ1 then χ2 into an empty table
/// with `window = |χ2|` therefore reproduces a build on the same data.
pub fn update_table(
    table: &CalibrationTable,
    observed: impl IntoIterator<Item = CellObservation>,
    policy: RefreshPolicy,
) -> (CalibrationTable, UpdateSummary) {
    let mut next = table.clone();
    let mut summary = UpdateSummary::default();
    let mut touched = vec![false; table.delta.len()];
    let window = policy.window.max(1);
    for o in observed {
        let obs = Observation {
            lower: o.lower,
            upper: o.upper,
            truth: o.truth,
        };
        if o.node >= next.nodes() || o.horizon >= next.horizons() || !obs.is_valid() {
            summary.skipped += 1;
            continue;
        }
        let cell = next.state.get_mut(o.node, o.horizon);
        if cell.pool.is_empty() {
            cell.pool.push(obs.score());
        } else {
            cell.recent.push_back(obs);
            while cell.recent.len() > window {
                let old = cell.recent.pop_front().expect("non-empty buffer");
                cell.pool.push(old.score());
            }
        }
        touched[next.state.index(o.node, o.horizon)] = true;
        summary.accepted += 1;
    }
    for k in touched.iter().enumerate().filter(|(_, t)| **t).map(|(k, _)| k) {
        let (node, horizon) = (k / next.horizons(), k % next.horizons());
        let was_present = next.delta(node, horizon).is_some();
        next.reselect(node, horizon);
        summary.reselected_cells += 1;
        if !was_present && next.delta(node, horizon).is_some() {
            summary.newly_present += 1;
        }
    }
    next.metadata.updates += summary.accepted;
    next.metadata.skipped += summary.skipped;
    next.metadata.missing_cells = next.missing_cells();
    (next, summary)
}
