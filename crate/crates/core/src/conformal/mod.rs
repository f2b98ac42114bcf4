//! Conformal calibration of interval forecasts.
//!
//! Two routes share the same nonconformity score `max(lower - y, y - upper)`:
//!
//! * [`fit_global_delta`] pools every score and widens all intervals by one
//!   split-conformal quantile (plain CQR).
//! * [`build_table`] keeps the scores per (node, horizon) cell. The scores
//!   of χ1 propose candidate adjustments (residual percentiles, or an evenly
//!   spaced grid for comparison) and χ2 picks, per cell, the candidate with
//!   the best coverage/width score. [`apply_adjustment`] then looks the
//!   adjustment up at prediction time and [`update_table`] keeps the table
//!   current as new truths arrive.

mod candidates;
mod global;
mod grid;
mod residuals;
mod select;
mod table;

pub use candidates::{
    build_grid_candidates, build_percentiles, grid_candidates, percentile_candidates,
    PercentileCandidates,
};
pub use global::{fit_global_delta, GlobalDelta, GLOBAL_DELTA_FORMAT};
pub use grid::CellGrid;
pub use residuals::{
    collect_observations, collect_residuals, nonconformity, observations_from_forecasts,
    Observation, ObservationSet, ResidualStore,
};
pub use select::{
    argmin_score, evaluate_candidate, select_cell_delta, widen, width_normalizer,
    CellSelection, SelectionObjective,
};
pub use table::{
    apply_adjustment, build_table, build_table_grid, update_table, BuildMetadata,
    CalibrationTable, CandidateSearch, CellObservation, CellState, CoverageCredit, Fallback,
    RefreshPolicy, TableParams, UpdateSummary, TABLE_FORMAT,
};
