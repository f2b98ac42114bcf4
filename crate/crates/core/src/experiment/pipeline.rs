use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_profile, hist_forecast, mc_dropout_interval, Granularity, IcpCalibration, McDropoutConfig,
};
use crate::conformal::{
    apply_adjustment, build_table, CalibrationTable, Fallback, GlobalDelta,
};
use crate::dataset::{
    generate_synthetic, load_panel, make_windows, split_windows, write_panel, LoadOptions,
    SeriesPanel, Splits, WindowSample,
};
use crate::error::{Error, Result};
use crate::forecaster::{
    forecast_windows, train, IntervalForecast, LossHistory, MlpArchitecture, MlpForecaster,
    QuantileLevels,
};
use crate::metrics::{records_from_forecast, EvalReport};

use super::{ExperimentConfig, FallbackPolicy, Method};

pub const PANEL_FILE: &str = "panel.csv";
pub const MODEL_FILE: &str = "model.json";
pub const MC_MODEL_FILE: &str = "mc_model.json";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const MC_HISTORY_FILE: &str = "mc_loss_history.csv";
pub const TABLE_FILE: &str = "table.json";
pub const GLOBAL_FILE: &str = "global_delta.json";
pub const REPORT_DIR: &str = "reports";

/// The panel and its five window partitions.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub panel: SeriesPanel,
    pub splits: Splits,
    /// Steps `0..train_steps` cover every train-pool window.
    pub train_steps: usize,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SeriesPanel> {
    match &cfg.dataset.path {
        Some(path) => load_panel(
            path,
            &LoadOptions {
                input_steps: cfg.window.input_steps,
                horizon: cfg.window.horizon,
                forward_fill: cfg.dataset.forward_fill,
                interval_minutes: cfg.dataset.interval_minutes,
            },
        ),
        None => generate_synthetic(&cfg.dataset.synthetic),
    }
}

pub fn prepare_panel(cfg: &ExperimentConfig, panel: SeriesPanel) -> Result<PreparedData> {
    let windows = make_windows(&panel, cfg.window.input_steps, cfg.window.horizon)?;
    let splits = split_windows(windows, &cfg.split)?;
    let last_anchor = splits
        .train
        .iter()
        .chain(&splits.chi1)
        .chain(&splits.chi2)
        .map(|w| w.anchor_index)
        .max()
        .unwrap_or(0);
    let train_steps = (last_anchor + cfg.window.horizon + 1).min(panel.step_count());
    Ok(PreparedData {
        panel,
        splits,
        train_steps,
    })
}

/// Loads or generates the panel (with the master seed applied) and splits it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let cfg = cfg.resolved();
    prepare_panel(&cfg, load_dataset(&cfg)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes the synthetic panel to `out`, refusing to replace an existing file
/// unless `force` is set.
pub fn cmd_generate(cfg: &ExperimentConfig, out: Option<&Path>, force: bool) -> Result<PathBuf> {
    let cfg = cfg.resolved();
    cfg.dataset.synthetic.validate()?;
    let path = out.map_or_else(|| cfg.output_dir.join(PANEL_FILE), Path::to_path_buf);
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path));
    }
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_panel(&generate_synthetic(&cfg.dataset.synthetic)?, &path)?;
    Ok(path)
}

/// Trains one quantile network on the model-train split.
pub fn fit_model(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    levels: QuantileLevels,
    dropout_rate: f64,
) -> Result<(MlpForecaster, LossHistory)> {
    let cfg = cfg.resolved();
    let arch = MlpArchitecture {
        dropout_rate,
        ..cfg.architecture.clone()
    };
    let model = MlpForecaster::new(
        &arch,
        data.panel.node_count(),
        cfg.window.input_steps,
        cfg.window.horizon,
        levels,
        cfg.seed,
    )?;
    train(model, &data.splits.train, &data.splits.validation, &cfg.train, levels)
}

/// Trained networks: the quantile model, plus a dropout-trained twin when MC
/// dropout is among the methods.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub model: MlpForecaster,
    pub history: LossHistory,
    pub mc: Option<(MlpForecaster, LossHistory)>,
}

pub fn train_models(cfg: &ExperimentConfig, data: &PreparedData) -> Result<TrainedModels> {
    let (model, history) = fit_model(cfg, data, cfg.levels, cfg.architecture.dropout_rate)?;
    let mc = if cfg.wants(Method::McDropout) {
        Some(fit_model(cfg, data, cfg.levels, cfg.mc_dropout.dropout_rate)?)
    } else {
        None
    };
    Ok(TrainedModels { model, history, mc })
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainedModels> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let trained = train_models(cfg, &data)?;
    ensure_dir(&cfg.output_dir)?;
    trained.model.save(cfg.output_dir.join(MODEL_FILE))?;
    std::fs::write(cfg.output_dir.join(HISTORY_FILE), trained.history.to_csv())?;
    if let Some((mc, history)) = &trained.mc {
        mc.save(cfg.output_dir.join(MC_MODEL_FILE))?;
        std::fs::write(cfg.output_dir.join(MC_HISTORY_FILE), history.to_csv())?;
    }
    Ok(trained)
}

/// Adaptive table and global delta from the same χ1/χ2 windows.
pub fn calibrate(
    cfg: &ExperimentConfig,
    model: &MlpForecaster,
    splits: &Splits,
) -> Result<(CalibrationTable, GlobalDelta)> {
    let cfg = cfg.resolved();
    let table = build_table(model, &splits.chi1, &splits.chi2, cfg.calibration.table_params())?
        .with_seed(cfg.seed);
    let global = crate::conformal::fit_global_delta(
        model,
        &splits.calibration(),
        cfg.calibration.alpha_cal,
    )?;
    Ok((table, global))
}

fn model_path(cfg: &ExperimentConfig, given: Option<&Path>, file: &str) -> PathBuf {
    given.map_or_else(|| cfg.output_dir.join(file), Path::to_path_buf)
}

pub fn cmd_calibrate(
    cfg: &ExperimentConfig,
    model: Option<&Path>,
) -> Result<(CalibrationTable, GlobalDelta)> {
    cfg.validate()?;
    let model = MlpForecaster::load(model_path(cfg, model, MODEL_FILE))?;
    let data = prepare_data(cfg)?;
    let (table, global) = calibrate(cfg, &model, &data.splits)?;
    ensure_dir(&cfg.output_dir)?;
    table.save(cfg.output_dir.join(TABLE_FILE))?;
    global.save(cfg.output_dir.join(GLOBAL_FILE))?;
    Ok((table, global))
}

/// Everything evaluation reads.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub model: MlpForecaster,
    pub table: CalibrationTable,
    pub global: GlobalDelta,
    pub mc_model: Option<MlpForecaster>,
}

/// Test-window forecasts per method. DQR forecasts are computed once and the
/// calibrated methods are derived from that cache.
#[derive(Debug, Clone)]
pub struct MethodForecasts {
    pub windows: Vec<WindowSample>,
    pub dqr: Vec<IntervalForecast>,
    pub by_method: Vec<(Method, Vec<IntervalForecast>)>,
}

impl MethodForecasts {
    pub fn get(&self, method: Method) -> Option<&[IntervalForecast]> {
        self.by_method
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, f)| f.as_slice())
    }
}

fn mc_seed(base: u64, window: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ window as u64
}

pub fn method_forecasts(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    artifacts: &Artifacts,
) -> Result<MethodForecasts> {
    let cfg = cfg.resolved();
    let windows = data.splits.test.clone();
    let dqr = forecast_windows(&artifacts.model, &windows)?;
    let fallback = match cfg.calibration.fallback {
        FallbackPolicy::Unchanged => Fallback::Unchanged,
        FallbackPolicy::Global => Fallback::Global(artifacts.global),
    };
    let mut by_method = Vec::new();
    for method in Method::ALL.into_iter().filter(|m| cfg.wants(*m)) {
        let forecasts = match method {
            Method::Dqr => dqr.clone(),
            Method::Cqr => dqr.iter().map(|f| artifacts.global.apply(f)).collect(),
            Method::Adaptive => dqr
                .iter()
                .map(|f| apply_adjustment(f, &artifacts.table, fallback))
                .collect::<Result<_>>()?,
            Method::Icp => {
                let icp = IcpCalibration::fit(
                    &artifacts.model,
                    &data.splits.calibration(),
                    cfg.calibration.alpha_cal,
                )?;
                dqr.iter().map(|f| icp.interval(&f.point)).collect()
            }
            Method::HistD | Method::HistW => {
                let granularity = if method == Method::HistD {
                    Granularity::Daily
                } else {
                    Granularity::Weekly
                };
                let segment = data.panel.slice_steps(0, data.train_steps)?;
                let profile = fit_profile(&segment, granularity)?;
                windows
                    .iter()
                    .map(|w| hist_forecast(&profile, w, cfg.window.horizon))
                    .collect::<Result<_>>()?
            }
            Method::McDropout => {
                let mc = artifacts.mc_model.as_ref().ok_or_else(|| {
                    Error::MissingArtifact(cfg.output_dir.join(MC_MODEL_FILE))
                })?;
                windows
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let mc_cfg = McDropoutConfig {
                            seed: mc_seed(cfg.mc_dropout.seed, k),
                            ..cfg.mc_dropout
                        };
                        mc_dropout_interval(mc, &w.input, &mc_cfg)
                    })
                    .collect::<Result<_>>()?
            }
        };
        by_method.push((method, forecasts));
    }
    Ok(MethodForecasts {
        windows,
        dqr,
        by_method,
    })
}

pub fn report_for(
    method: &str,
    forecasts: &[IntervalForecast],
    windows: &[WindowSample],
    alpha_target: f64,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    for (f, w) in forecasts.iter().zip(windows) {
        records.extend(records_from_forecast(f, &w.target)?);
    }
    let (nodes, horizon) = forecasts
        .first()
        .map(|f| (f.node_count(), f.horizon()))
        .ok_or_else(|| Error::InsufficientData("no test windows".into()))?;
    EvalReport::from_records(method, &records, nodes, horizon, alpha_target)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    artifacts: &Artifacts,
) -> Result<Vec<EvalReport>> {
    let forecasts = method_forecasts(cfg, data, artifacts)?;
    forecasts
        .by_method
        .iter()
        .map(|(m, f)| report_for(m.name(), f, &forecasts.windows, cfg.calibration.alpha_target))
        .collect()
}

/// One row per method with the overall metrics.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "method,picp,mpiw,coverage_deviation,mae,rmse,mape,mape_excluded,node_picp_std,n_records\n",
    );
    for r in reports {
        let o = &r.overall;
        let mape = o.mape.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            o.picp,
            o.mpiw,
            o.coverage_deviation,
            o.mae,
            o.rmse,
            mape,
            o.mape_excluded,
            r.node_picp_dispersion(),
            r.n_records
        );
    }
    out
}

pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    ensure_dir(dir)?;
    for r in reports {
        std::fs::write(dir.join(format!("{}.json", r.method)), r.to_json()?)?;
        std::fs::write(dir.join(format!("{}.csv", r.method)), r.to_csv())?;
    }
    std::fs::write(dir.join("summary.csv"), summary_csv(reports))?;
    Ok(())
}

/// Paths of evaluation inputs; `None` means the default file in the output
/// directory.
#[derive(Debug, Clone, Default)]
pub struct EvaluateInputs {
    pub model: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub global: Option<PathBuf>,
    pub mc_model: Option<PathBuf>,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, inputs: &EvaluateInputs) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let model = MlpForecaster::load(model_path(cfg, inputs.model.as_deref(), MODEL_FILE))?;
    let table = CalibrationTable::load(model_path(cfg, inputs.table.as_deref(), TABLE_FILE))?;
    let global = GlobalDelta::load(model_path(cfg, inputs.global.as_deref(), GLOBAL_FILE))?;
    let mc_model = if cfg.wants(Method::McDropout) {
        Some(MlpForecaster::load(model_path(
            cfg,
            inputs.mc_model.as_deref(),
            MC_MODEL_FILE,
        ))?)
    } else {
        None
    };
    let artifacts = Artifacts {
        model,
        table,
        global,
        mc_model,
    };
    let data = prepare_data(cfg)?;
    let reports = evaluate(cfg, &data, &artifacts)?;
    write_reports(&cfg.output_dir.join(REPORT_DIR), &reports)?;
    Ok(reports)
}

/// Train, calibrate and evaluate in memory.
pub fn run_pipeline(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(Artifacts, Vec<EvalReport>)> {
    cfg.validate()?;
    let trained = train_models(cfg, data)?;
    let (table, global) = calibrate(cfg, &trained.model, &data.splits)?;
    let artifacts = Artifacts {
        model: trained.model,
        table,
        global,
        mc_model: trained.mc.map(|(m, _)| m),
    };
    let reports = evaluate(cfg, data, &artifacts)?;
    Ok((artifacts, reports))
}

/// Ranked method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub picp: f64,
    pub mpiw: f64,
    pub coverage_deviation: f64,
    pub node_picp_std: f64,
}

/// Orders reports by absolute coverage deviation, then by MPIW.
pub fn compare_reports(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method.clone(),
            picp: r.overall.picp,
            mpiw: r.overall.mpiw,
            coverage_deviation: r.coverage_deviation(),
            node_picp_std: r.node_picp_dispersion(),
        })
        .collect();
    rows.sort_by(|a, b| {
        a.coverage_deviation
            .abs()
            .total_cmp(&b.coverage_deviation.abs())
            .then(a.mpiw.total_cmp(&b.mpiw))
    });
    Ok(Comparison { rows })
}

impl Comparison {
    /// Markdown table; the best row is set in bold.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "| rank | method | PICP (%) | deviation | MPIW | node PICP std |\n|---|---|---|---|---|---|\n",
        );
        for (k, r) in self.rows.iter().enumerate() {
            let cells = [
                (k + 1).to_string(),
                r.method.clone(),
                format!("{:.1}", r.picp * 100.0),
                format!("{:+.1}%", r.coverage_deviation),
                format!("{:.3}", r.mpiw),
                format!("{:.3}", r.node_picp_std),
            ];
            let cells: Vec<String> = if k == 0 {
                cells.iter().map(|c| format!("**{c}**")).collect()
            } else {
                cells.to_vec()
            };
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn cmd_compare(paths: &[PathBuf]) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least 2 reports, got {}",
            paths.len()
        )));
    }
    let reports = paths
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<Vec<_>>>()?;
    compare_reports(&reports)
}
