use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::McDropoutConfig;
use crate::conformal::{CandidateSearch, CoverageCredit, TableParams};
use crate::dataset::{SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::forecaster::{MlpArchitecture, QuantileLevels, TrainConfig};

/// Interval methods the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    HistD,
    HistW,
    Icp,
    Dqr,
    Cqr,
    Adaptive,
    McDropout,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::HistD,
        Method::HistW,
        Method::Icp,
        Method::Dqr,
        Method::Cqr,
        Method::Adaptive,
        Method::McDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::HistD => "hist-d",
            Method::HistW => "hist-w",
            Method::Icp => "icp",
            Method::Dqr => "dqr",
            Method::Cqr => "cqr",
            Method::Adaptive => "adaptive",
            Method::McDropout => "mc-dropout",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where the panel comes from: a CSV file, or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub forward_fill: bool,
    /// Sampling interval for files with integer step timestamps.
    pub interval_minutes: Option<u32>,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            forward_fill: false,
            interval_minutes: None,
            // Two weeks, so the weekly profile has a full week of training data.
            synthetic: SyntheticSpec {
                step_count: 4032,
                ..SyntheticSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub input_steps: usize,
    pub horizon: usize,
    /// Upper bound enforced on both `input_steps` and `horizon`.
    pub max_steps: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_steps: 12,
            horizon: 12,
            max_steps: 12,
        }
    }
}

/// Policy for cells without a table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    #[default]
    Unchanged,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Candidates per cell (`m`).
    pub candidates: usize,
    pub lambda: f64,
    /// Mis-coverage used by the global conformal step (CQR and ICP).
    pub alpha_cal: f64,
    /// Mis-coverage the evaluation and the table's coverage credit aim at.
    pub alpha_target: f64,
    pub search: CandidateSearch,
    pub credit: CoverageCredit,
    pub fallback: FallbackPolicy,
    /// Per-cell length of the recent-observation window for online updates.
    pub refresh_window: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            candidates: 100,
            lambda: 0.5,
            alpha_cal: 0.1,
            alpha_target: 0.1,
            search: CandidateSearch::Quantile,
            credit: CoverageCredit::CappedAtTarget,
            fallback: FallbackPolicy::Unchanged,
            refresh_window: 200,
        }
    }
}

impl CalibrationConfig {
    pub fn table_params(&self) -> TableParams {
        TableParams {
            lambda: self.lambda,
            candidates: self.candidates,
            alpha_target: self.alpha_target,
            search: self.search,
            credit: self.credit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub coverage_levels: Vec<f64>,
    /// Train-to-calibration ratios `(a, b)`.
    pub split_ratios: Vec<(u32, u32)>,
    pub grid_frequencies: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            coverage_levels: vec![0.6, 0.7, 0.8, 0.9, 0.95],
            split_ratios: vec![(6, 1), (5, 2), (4, 3), (1, 1), (3, 4), (2, 5), (1, 6)],
            grid_frequencies: vec![10, 20, 40, 60, 80, 100],
        }
    }
}

/// Everything an experiment run needs. Loaded from TOML; every section is
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; copied into every seeded section by [`Self::resolved`].
    pub seed: u64,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub architecture: MlpArchitecture,
    pub levels: QuantileLevels,
    pub calibration: CalibrationConfig,
    pub mc_dropout: McDropoutConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            methods: Method::ALL.to_vec(),
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            architecture: MlpArchitecture::default(),
            levels: QuantileLevels::default(),
            calibration: CalibrationConfig::default(),
            mc_dropout: McDropoutConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Copy of the config with the master seed pushed into the dataset,
    /// split, training and MC-dropout sections.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.dataset.synthetic.seed = c.seed;
        c.split.seed = c.seed;
        c.train.seed = c.seed;
        c.mc_dropout.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.window;
        if w.max_steps == 0
            || !(1..=w.max_steps).contains(&w.input_steps)
            || !(1..=w.max_steps).contains(&w.horizon)
        {
            return Err(Error::Config(format!(
                "input_steps {} and horizon {} must lie in [1, {}]",
                w.input_steps, w.horizon, w.max_steps
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.dataset.path.is_none() {
            self.dataset.synthetic.validate()?;
        }
        self.split.validate()?;
        self.train.validate()?;
        self.calibration.table_params().validate()?;
        let a = self.calibration.alpha_cal;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha_cal {a} outside (0, 1)")));
        }
        if self.calibration.refresh_window == 0 {
            return Err(Error::Config("refresh_window must be positive".into()));
        }
        if self.methods.contains(&Method::McDropout) {
            self.mc_dropout.validate()?;
        }
        for &level in &self.sweep.coverage_levels {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Config(format!("coverage level {level} outside (0, 1)")));
            }
        }
        if self.sweep.split_ratios.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Config("split ratios need positive parts".into()));
        }
        if self.sweep.grid_frequencies.iter().any(|&f| f < 2) {
            return Err(Error::Config("grid frequencies must be at least 2".into()));
        }
        Ok(())
    }

    pub fn wants(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OutlierSpec;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn customized_round_trip() {
        let mut c = ExperimentConfig {
            seed: 42,
            methods: vec![Method::Cqr, Method::Adaptive],
            ..ExperimentConfig::default()
        };
        c.dataset.path = Some("data/panel.csv".into());
        c.dataset.synthetic.noise_scales = vec![0.1, 0.7, 1.3];
        c.dataset.synthetic.outliers = vec![OutlierSpec {
            node: 1,
            probability: 0.05,
            magnitude: 30.0,
        }];
        c.calibration.lambda = 0.1 + 0.2;
        c.calibration.fallback = FallbackPolicy::Global;
        c.sweep.split_ratios = vec![(3, 4)];
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.calibration.lambda.to_bits(), c.calibration.lambda.to_bits());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml(
            "seed = 3\nmethods = [\"dqr\", \"mc-dropout\"]\n[window]\nhorizon = 6\n",
        )
        .unwrap();
        assert_eq!(c.window.horizon, 6);
        assert_eq!(c.window.input_steps, 12);
        assert_eq!(c.methods, vec![Method::Dqr, Method::McDropout]);
        assert_eq!(c.resolved().split.seed, 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("methods = [\"bayes\"]").is_err());
        let mut c = ExperimentConfig::default();
        c.window.horizon = 13;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.window.max_steps = 24;
        c.validate().unwrap();
        c.methods.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names_parse_back() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
