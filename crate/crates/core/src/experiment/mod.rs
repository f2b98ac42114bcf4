//! Config-driven experiment harness: data preparation, training,
//! calibration, evaluation of every interval method, sweeps and comparison.

mod config;
mod pipeline;
mod sweep;

pub use config::{
    CalibrationConfig, DatasetConfig, ExperimentConfig, FallbackPolicy, Method, SweepConfig,
    WindowConfig,
};
pub use pipeline::{
    calibrate, cmd_calibrate, cmd_compare, cmd_evaluate, cmd_generate, cmd_train,
    compare_reports, evaluate, fit_model, load_dataset, load_report, method_forecasts,
    prepare_data, prepare_panel, report_for, run_pipeline, summary_csv, train_models,
    write_reports, Artifacts, Comparison, ComparisonRow, EvaluateInputs, MethodForecasts,
    PreparedData, TrainedModels, GLOBAL_FILE, HISTORY_FILE, MC_HISTORY_FILE, MC_MODEL_FILE,
    MODEL_FILE, PANEL_FILE, REPORT_DIR, TABLE_FILE,
};
pub use sweep::{
    at_coverage, cmd_sweep, coverage_sweep, grid_sweep, run_sweep, split_sweep, SweepKind,
    SweepReport, SweepRow,
};
