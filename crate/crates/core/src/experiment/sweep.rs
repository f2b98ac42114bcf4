use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::conformal::{apply_adjustment, build_table, CandidateSearch, Fallback, TableParams};
use crate::error::{Error, Result};
use crate::forecaster::{forecast_windows, QuantileLevels};
use crate::metrics::EvalReport;

use super::pipeline::{fit_model, prepare_data, prepare_panel, report_for, run_pipeline, PreparedData};
use super::{load_dataset, ExperimentConfig, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Target coverage levels; the model is retrained at each level.
    Coverage,
    /// Train-to-calibration ratios of the train pool; retrained per ratio.
    Split,
    /// Quantile against grid candidate search at several candidate counts.
    Grid,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Coverage => "coverage",
            SweepKind::Split => "split",
            SweepKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Human-readable setting, e.g. `0.9` or `6:1`.
    pub setting: String,
    pub value: f64,
    pub method: String,
    pub picp: f64,
    pub mpiw: f64,
    pub coverage_deviation: f64,
    pub node_picp_std: f64,
}

impl SweepRow {
    fn new(setting: String, value: f64, report: &EvalReport) -> Self {
        Self {
            setting,
            value,
            method: report.method.clone(),
            picp: report.overall.picp,
            mpiw: report.overall.mpiw,
            coverage_deviation: report.coverage_deviation(),
            node_picp_std: report.node_picp_dispersion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn rows_for(&self, method: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("sweep,setting,value,method,picp,mpiw,coverage_deviation,node_picp_std\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.kind.name(),
                r.setting,
                r.value,
                r.method,
                r.picp,
                r.mpiw,
                r.coverage_deviation,
                r.node_picp_std
            );
        }
        out
    }
}

/// Config for one coverage level: training, calibration and evaluation all
/// use `alpha = 1 - level`.
pub fn at_coverage(cfg: &ExperimentConfig, level: f64) -> Result<ExperimentConfig> {
    let alpha = 1.0 - level;
    let mut c = cfg.clone();
    c.levels = QuantileLevels::new(alpha)?;
    c.calibration.alpha_cal = alpha;
    c.calibration.alpha_target = alpha;
    c.mc_dropout.alpha = alpha;
    c.methods = vec![Method::Dqr, Method::Cqr, Method::Adaptive];
    Ok(c)
}

pub fn coverage_sweep(cfg: &ExperimentConfig, data: &PreparedData) -> Result<SweepReport> {
    let mut rows = Vec::new();
    for &level in &cfg.sweep.coverage_levels {
        let c = at_coverage(cfg, level)?;
        let (_, reports) = run_pipeline(&c, data)?;
        rows.extend(reports.iter().map(|r| SweepRow::new(level.to_string(), level, r)));
    }
    Ok(SweepReport {
        kind: SweepKind::Coverage,
        rows,
    })
}

pub fn split_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let panel = load_dataset(&cfg.resolved())?;
    let mut rows = Vec::new();
    for &(a, b) in &cfg.sweep.split_ratios {
        let mut c = cfg.clone();
        c.split.calibration_frac_of_train = f64::from(b) / f64::from(a + b);
        c.methods = vec![Method::Cqr, Method::Adaptive];
        let data = prepare_panel(&c.resolved(), panel.clone())?;
        let (_, reports) = run_pipeline(&c, &data)?;
        let frac = c.split.calibration_frac_of_train;
        rows.extend(reports.iter().map(|r| SweepRow::new(format!("{a}:{b}"), frac, r)));
    }
    Ok(SweepReport {
        kind: SweepKind::Split,
        rows,
    })
}

/// One model; per candidate count a quantile table and a grid table are
/// built on the same χ1/χ2 and evaluated on the same forecasts.
pub fn grid_sweep(cfg: &ExperimentConfig, data: &PreparedData) -> Result<SweepReport> {
    cfg.validate()?;
    let (model, _) = fit_model(cfg, data, cfg.levels, cfg.architecture.dropout_rate)?;
    let dqr = forecast_windows(&model, &data.splits.test)?;
    let mut rows = Vec::new();
    for &count in &cfg.sweep.grid_frequencies {
        for (name, search) in [("quantile", CandidateSearch::Quantile), ("grid", CandidateSearch::Grid)] {
            let params = TableParams {
                candidates: count,
                search,
                ..cfg.calibration.table_params()
            };
            let table = build_table(&model, &data.splits.chi1, &data.splits.chi2, params)?;
            let adjusted = dqr
                .iter()
                .map(|f| apply_adjustment(f, &table, Fallback::Unchanged))
                .collect::<Result<Vec<_>>>()?;
            let report = report_for(name, &adjusted, &data.splits.test, cfg.calibration.alpha_target)?;
            rows.push(SweepRow::new(count.to_string(), count as f64, &report));
        }
    }
    Ok(SweepReport {
        kind: SweepKind::Grid,
        rows,
    })
}

pub fn run_sweep(cfg: &ExperimentConfig, kind: SweepKind) -> Result<SweepReport> {
    cfg.validate()?;
    match kind {
        SweepKind::Coverage => coverage_sweep(cfg, &prepare_data(cfg)?),
        SweepKind::Split => split_sweep(cfg),
        SweepKind::Grid => grid_sweep(cfg, &prepare_data(cfg)?),
    }
}

/// Runs the sweep and writes `sweep_<kind>.json` and `.csv` to the output
/// directory.
pub fn cmd_sweep(cfg: &ExperimentConfig, kind: SweepKind) -> Result<(SweepReport, PathBuf)> {
    let report = run_sweep(cfg, kind)?;
    if report.rows.is_empty() {
        return Err(Error::Config(format!("{} sweep has no settings", kind.name())));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let stem = cfg.output_dir.join(format!("sweep_{}", kind.name()));
    std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(stem.with_extension("csv"), report.to_csv())?;
    Ok((report, stem.with_extension("json")))
}
