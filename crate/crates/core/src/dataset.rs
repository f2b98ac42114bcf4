//! Multivariate panels, sliding windows and the train / calibration / test
//! partitions.
//!
//! A [`SeriesPanel`] holds one real value per (node, step) on a regular time
//! grid. [`make_windows`] turns it into supervised [`WindowSample`]s and
//! [`split_windows`] partitions those into the five disjoint sets the
//! calibration workflow needs: model-train, χ1, χ2, validation and test.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Reference instant for panels whose timestamp column holds integer steps.
pub fn step_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(1970, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch")
}

/// Values indexed by (node, time step) on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    node_ids: Vec<String>,
    values: Matrix,
    start: NaiveDateTime,
    interval_minutes: u32,
}

impl SeriesPanel {
    pub fn new(
        node_ids: Vec<String>,
        values: Matrix,
        start: NaiveDateTime,
        interval_minutes: u32,
    ) -> Result<Self> {
        if node_ids.is_empty() || values.cols() == 0 {
            return Err(Error::Schema("panel needs at least one node and one step".into()));
        }
        if node_ids.len() != values.rows() {
            return Err(Error::Schema(format!(
                "{} node ids for {} value rows",
                node_ids.len(),
                values.rows()
            )));
        }
        let mut seen = HashSet::new();
        for id in &node_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Schema(format!("duplicate node id {id:?}")));
            }
        }
        if interval_minutes == 0 {
            return Err(Error::Schema("sampling interval must be positive".into()));
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "non-finite value at node {}, step {}",
                pos / values.cols(),
                pos % values.cols()
            )));
        }
        Ok(Self {
            node_ids,
            values,
            start,
            interval_minutes,
        })
    }

    pub fn node_count(&self) -> usize {
        self.values.rows()
    }

    pub fn step_count(&self) -> usize {
        self.values.cols()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// `[N x T]` values, one row per node.
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn series(&self, node: usize) -> &[f64] {
        self.values.row(node)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::minutes(i64::from(self.interval_minutes) * step as i64)
    }

    /// Panel restricted to steps `start..end`.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.step_count() {
            return Err(Error::Contract(format!(
                "step range {start}..{end} outside panel of {} steps",
                self.step_count()
            )));
        }
        Ok(Self {
            node_ids: self.node_ids.clone(),
            values: self.values.columns(start, end),
            start: self.timestamp(start),
            interval_minutes: self.interval_minutes,
        })
    }

    pub fn ensure_windowable(&self, input_steps: usize, horizon: usize) -> Result<()> {
        if self.step_count() < input_steps + horizon {
            return Err(Error::InsufficientData(format!(
                "{} steps, windows need at least {}",
                self.step_count(),
                input_steps + horizon
            )));
        }
        Ok(())
    }
}

/// How to treat a wide CSV on load.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub input_steps: usize,
    pub horizon: usize,
    /// Fill empty / `NaN` cells with the previous observation of the node.
    pub forward_fill: bool,
    /// Sampling period. Inferred from the first two ISO timestamps when unset;
    /// integer-step files default to 5 minutes.
    pub interval_minutes: Option<u32>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            input_steps: 12,
            horizon: 12,
            forward_fill: false,
            interval_minutes: None,
        }
    }
}

enum StampColumn {
    Steps(Vec<i64>),
    Instants(Vec<NaiveDateTime>),
}

fn parse_instant(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(raw).ok().map(|d| d.naive_utc()))
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na")
}

/// Loads a wide CSV: a timestamp column followed by one column per node id.
///
/// Row and column numbers in parse errors are 1-based file coordinates, the
/// header being row 1.
pub fn load_panel(path: impl AsRef<Path>, options: &LoadOptions) -> Result<SeriesPanel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Schema(
            "expected a timestamp column followed by at least one node column".into(),
        ));
    }
    let node_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let node_count = node_ids.len();

    let mut raw_stamps = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); node_count];
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != node_count + 1 {
            return Err(Error::Parse {
                row,
                column: record.len().min(node_count + 1),
                message: format!("expected {} fields, found {}", node_count + 1, record.len()),
            });
        }
        raw_stamps.push(record[0].to_owned());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value = if is_missing(cell) {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: j + 2,
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: j + 2,
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                Some(v)
            };
            columns[j].push(value);
        }
    }

    let steps = raw_stamps.len();
    if steps < options.input_steps + options.horizon {
        return Err(Error::InsufficientData(format!(
            "{steps} rows, windows need at least {}",
            options.input_steps + options.horizon
        )));
    }

    let stamps = parse_stamps(&raw_stamps)?;
    let (start, interval) = resolve_grid(&stamps, options.interval_minutes)?;

    let mut data = Vec::with_capacity(node_count * steps);
    for (j, column) in columns.iter().enumerate() {
        let mut last = None;
        for (t, cell) in column.iter().enumerate() {
            let value = match (cell, last) {
                (Some(v), _) => *v,
                (None, Some(prev)) if options.forward_fill => prev,
                (None, _) => {
                    return Err(Error::Parse {
                        row: t + 2,
                        column: j + 2,
                        message: if options.forward_fill {
                            "leading missing value cannot be forward-filled".into()
                        } else {
                            "missing value".into()
                        },
                    })
                }
            };
            last = Some(value);
            data.push(value);
        }
    }
    SeriesPanel::new(
        node_ids,
        Matrix::from_vec(node_count, steps, data)?,
        start,
        interval,
    )
}

fn parse_stamps(raw: &[String]) -> Result<StampColumn> {
    if raw.iter().all(|s| s.parse::<i64>().is_ok()) {
        return Ok(StampColumn::Steps(
            raw.iter().map(|s| s.parse().expect("checked")).collect(),
        ));
    }
    raw.iter()
        .enumerate()
        .map(|(i, s)| {
            parse_instant(s).ok_or_else(|| Error::Parse {
                row: i + 2,
                column: 1,
                message: format!("cannot parse timestamp {s:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(StampColumn::Instants)
}

fn resolve_grid(stamps: &StampColumn, interval: Option<u32>) -> Result<(NaiveDateTime, u32)> {
    match stamps {
        StampColumn::Steps(steps) => {
            let interval = interval.unwrap_or(5);
            for (i, pair) in steps.windows(2).enumerate() {
                if pair[1] != pair[0] + 1 {
                    return Err(Error::Schema(format!(
                        "integer timestamps must increase by one (row {})",
                        i + 3
                    )));
                }
            }
            let start = step_epoch() + Duration::minutes(i64::from(interval) * steps[0]);
            Ok((start, interval))
        }
        StampColumn::Instants(instants) => {
            let interval = match interval {
                Some(v) => v,
                None if instants.len() >= 2 => {
                    let minutes = (instants[1] - instants[0]).num_minutes();
                    u32::try_from(minutes)
                        .ok()
                        .filter(|&m| m > 0)
                        .ok_or_else(|| Error::Schema("timestamps must increase".into()))?
                }
                None => 5,
            };
            let step = Duration::minutes(i64::from(interval));
            for (i, pair) in instants.windows(2).enumerate() {
                if pair[1] - pair[0] != step {
                    return Err(Error::Schema(format!(
                        "irregular sampling at row {}: expected a {interval}-minute step",
                        i + 3
                    )));
                }
            }
            Ok((instants[0], interval))
        }
    }
}

/// Writes the panel as a wide CSV with ISO-8601 timestamps.
pub fn write_panel(panel: &SeriesPanel, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_owned()];
    header.extend(panel.node_ids.iter().cloned());
    writer.write_record(&header)?;
    let mut row = Vec::with_capacity(panel.node_count() + 1);
    for t in 0..panel.step_count() {
        row.clear();
        row.push(panel.timestamp(t).format(TIMESTAMP_FORMAT).to_string());
        for i in 0..panel.node_count() {
            row.push(panel.values.get(i, t).to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseProfile {
    SinusoidalDaily,
    Constant,
}

/// Occasional large jumps injected into one node's series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    pub node: usize,
    /// Per-step probability of a jump.
    pub probability: f64,
    /// Jump size in data units; the sign is drawn uniformly.
    pub magnitude: f64,
}

/// Parameters of the synthetic traffic-like generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub node_count: usize,
    pub step_count: usize,
    pub interval_minutes: u32,
    pub base_profile: BaseProfile,
    pub base_level: f64,
    /// Peak deviation of the daily sinusoid from `base_level`.
    pub amplitude: f64,
    /// Per-node noise standard deviation. A single entry is broadcast.
    pub noise_scales: Vec<f64>,
    /// Multiply the noise by `rush_gain` during 07:00-09:00 and 16:00-19:00.
    pub heteroscedastic_by_time: bool,
    pub rush_gain: f64,
    pub outliers: Vec<OutlierSpec>,
    #[serde(with = "iso_stamp")]
    pub start: NaiveDateTime,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            node_count: 8,
            step_count: 2016,
            interval_minutes: 5,
            base_profile: BaseProfile::SinusoidalDaily,
            base_level: 60.0,
            amplitude: 15.0,
            noise_scales: vec![1.0],
            heteroscedastic_by_time: true,
            rush_gain: 2.0,
            outliers: Vec::new(),
            start: NaiveDate::from_ymd_opt(2012, 3, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date"),
            seed: 0,
        }
    }
}

mod iso_stamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.format(super::TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_instant(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {raw:?}")))
    }
}

impl SyntheticSpec {
    /// Noise scale of every node after broadcasting.
    pub fn scales(&self) -> Result<Vec<f64>> {
        let scales = match self.noise_scales.len() {
            1 => vec![self.noise_scales[0]; self.node_count],
            n if n == self.node_count => self.noise_scales.clone(),
            n => {
                return Err(Error::Config(format!(
                    "{n} noise scales for {} nodes",
                    self.node_count
                )))
            }
        };
        // Zero is accepted so that noise-free panels can be generated.
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("noise scales must be finite and non-negative".into()));
        }
        Ok(scales)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 || self.step_count == 0 || self.interval_minutes == 0 {
            return Err(Error::Config(
                "node_count, step_count and interval_minutes must be positive".into(),
            ));
        }
        self.scales()?;
        if !self.rush_gain.is_finite() || self.rush_gain <= 0.0 {
            return Err(Error::Config("rush_gain must be positive".into()));
        }
        for o in &self.outliers {
            if o.node >= self.node_count || !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::Config(format!("invalid outlier spec {o:?}")));
            }
        }
        Ok(())
    }

    /// Deterministic mean level at a given instant.
    pub fn profile(&self, at: NaiveDateTime) -> f64 {
        match self.base_profile {
            BaseProfile::Constant => self.base_level,
            BaseProfile::SinusoidalDaily => {
                let minute = f64::from(at.num_seconds_from_midnight()) / 60.0;
                self.base_level + self.amplitude * (2.0 * PI * minute / 1440.0).sin()
            }
        }
    }

    /// Noise gain at a given instant.
    pub fn gain(&self, at: NaiveDateTime) -> f64 {
        if !self.heteroscedastic_by_time {
            return 1.0;
        }
        let hour = at.hour();
        if (7..9).contains(&hour) || (16..19).contains(&hour) {
            self.rush_gain
        } else {
            1.0
        }
    }
}

/// `values[i][t] = profile(t) + scale_i * gain(t) * eps`, plus any configured
/// outlier jumps.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesPanel> {
    spec.validate()?;
    let scales = spec.scales()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step = Duration::minutes(i64::from(spec.interval_minutes));
    let stamps: Vec<NaiveDateTime> = (0..spec.step_count)
        .map(|t| spec.start + step * t as i32)
        .collect();
    let mut values = Matrix::zeros(spec.node_count, spec.step_count);
    for (i, scale) in scales.iter().enumerate() {
        let row = values.row_mut(i);
        for (t, at) in stamps.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            row[t] = spec.profile(*at) + scale * spec.gain(*at) * eps;
        }
    }
    for outlier in &spec.outliers {
        let row = values.row_mut(outlier.node);
        for v in row.iter_mut() {
            if rng.random::<f64>() < outlier.probability {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *v += sign * outlier.magnitude;
            }
        }
    }
    let node_ids = (0..spec.node_count).map(|i| format!("node{i:03}")).collect();
    SeriesPanel::new(node_ids, values, spec.start, spec.interval_minutes)
}

/// One supervised example: `m` input steps and `h` target steps for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[N x m]`, columns are steps `anchor-m+1 ..= anchor`.
    pub input: Matrix,
    /// `[N x h]`, columns are steps `anchor+1 ..= anchor+h`.
    pub target: Matrix,
    /// Index of the last input step.
    pub anchor_index: usize,
    pub anchor_timestamp: NaiveDateTime,
}

impl WindowSample {
    /// Timestamp of the `j`-th target column (0-based).
    pub fn target_timestamp(&self, j: usize, interval_minutes: u32) -> NaiveDateTime {
        self.anchor_timestamp + Duration::minutes(i64::from(interval_minutes) * (j as i64 + 1))
    }
}

/// All stride-1 windows, ordered by anchor.
pub fn make_windows(
    panel: &SeriesPanel,
    input_steps: usize,
    horizon: usize,
) -> Result<Vec<WindowSample>> {
    if input_steps == 0 || horizon == 0 {
        return Err(Error::Config("window sizes must be positive".into()));
    }
    panel.ensure_windowable(input_steps, horizon)?;
    let count = panel.step_count() - input_steps - horizon + 1;
    Ok((0..count)
        .map(|k| {
            let anchor = k + input_steps - 1;
            WindowSample {
                input: panel.values.columns(k, anchor + 1),
                target: panel.values.columns(anchor + 1, anchor + 1 + horizon),
                anchor_index: anchor,
                anchor_timestamp: panel.timestamp(anchor),
            }
        })
        .collect())
}

/// Fractions controlling [`split_windows`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub calibration_frac_of_train: f64,
    pub chi2_frac_of_calibration: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            calibration_frac_of_train: 0.4,
            chi2_frac_of_calibration: 0.5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            self.train_frac,
            self.val_frac,
            self.test_frac,
            self.calibration_frac_of_train,
            self.chi2_frac_of_calibration,
        ];
        if fracs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Config("split fractions must be strictly positive".into()));
        }
        if self.calibration_frac_of_train >= 1.0 || self.chi2_frac_of_calibration >= 1.0 {
            return Err(Error::Config(
                "calibration and chi2 fractions must be below one".into(),
            ));
        }
        let total = self.train_frac + self.val_frac + self.test_frac;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "train/val/test fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// The five disjoint partitions, each ordered by anchor.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<WindowSample>,
    pub chi1: Vec<WindowSample>,
    pub chi2: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl Splits {
    /// χ1 followed by χ2, both in anchor order.
    pub fn calibration(&self) -> Vec<WindowSample> {
        self.chi1.iter().chain(&self.chi2).cloned().collect()
    }
}

/// Set sizes `(model-train, chi1, chi2, validation, test)` for `n` windows.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize, usize, usize) {
    let total = n as f64;
    let test = ((spec.test_frac * total).round() as usize).min(n);
    let validation = ((spec.val_frac * total).round() as usize).min(n - test);
    let pool = n - test - validation;
    let calibration = (spec.calibration_frac_of_train * pool as f64).round() as usize;
    let chi2 = (spec.chi2_frac_of_calibration * calibration as f64).round() as usize;
    (pool - calibration, calibration - chi2, chi2, validation, test)
}

/// Temporal train-pool / validation / test split, then seeded sampling of the
/// calibration windows (χ1, χ2) out of the train pool.
pub fn split_windows(samples: Vec<WindowSample>, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::DegenerateSplit("no windows to split".into()));
    }
    let n = samples.len();
    let (n_train, n_chi1, n_chi2, n_val, n_test) = split_sizes(n, spec);
    for (name, size) in [
        ("model-train", n_train),
        ("chi1", n_chi1),
        ("chi2", n_chi2),
        ("validation", n_val),
        ("test", n_test),
    ] {
        if size == 0 {
            return Err(Error::DegenerateSplit(format!(
                "{name} set would be empty for {n} windows"
            )));
        }
    }
    let pool_len = n_train + n_chi1 + n_chi2;

    let mut order: Vec<usize> = (0..pool_len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // role per pool position: 0 = chi1, 1 = chi2, 2 = train
    let mut role = vec![2u8; pool_len];
    for &k in &order[..n_chi1] {
        role[k] = 0;
    }
    for &k in &order[n_chi1..n_chi1 + n_chi2] {
        role[k] = 1;
    }

    let mut splits = Splits {
        train: Vec::with_capacity(n_train),
        chi1: Vec::with_capacity(n_chi1),
        chi2: Vec::with_capacity(n_chi2),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (k, sample) in samples.into_iter().enumerate() {
        if k < pool_len {
            match role[k] {
                0 => splits.chi1.push(sample),
                1 => splits.chi2.push(sample),
                _ => splits.train.push(sample),
            }
        } else if k < pool_len + n_val {
            splits.validation.push(sample);
        } else {
            splits.test.push(sample);
        }
    }
    Ok(splits)
}

/// Day-of-week index with Monday = 0.
pub(crate) fn weekday_index(at: NaiveDateTime) -> u32 {
    at.weekday().num_days_from_monday()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    fn small_options() -> LoadOptions {
        LoadOptions {
            input_steps: 3,
            horizon: 2,
            ..LoadOptions::default()
        }
    }

    fn ramp_panel(nodes: usize, steps: usize) -> SeriesPanel {
        let data = (0..nodes * steps).map(|v| v as f64).collect();
        SeriesPanel::new(
            (0..nodes).map(|i| format!("n{i}")).collect(),
            Matrix::from_vec(nodes, steps, data).unwrap(),
            step_epoch(),
            5,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_column_csv() {
        let mut content = String::from("timestamp,a,b\n");
        for t in 0..10 {
            content.push_str(&format!("{t},{},{}\n", t as f64 * 1.5, 100 - t));
        }
        let file = write_csv(&content);
        let panel = load_panel(file.path(), &small_options()).unwrap();
        assert_eq!(panel.node_count(), 2);
        assert_eq!(panel.step_count(), 10);
        assert_eq!(panel.node_ids(), ["a", "b"]);
        assert_eq!(panel.values().get(0, 4), 6.0);
        assert_eq!(panel.values().get(1, 9), 91.0);
        assert_eq!(panel.interval_minutes(), 5);
    }

    #[test]
    fn reports_coordinates_of_bad_cell() {
        let content = "timestamp,a,b\n0,1,2\n1,3,x\n2,5,6\n3,1,1\n4,1,1\n";
        let file = write_csv(content);
        match load_panel(file.path(), &small_options()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 3)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_node_ids() {
        let content = "timestamp,a,a\n0,1,2\n1,1,2\n2,1,2\n3,1,2\n4,1,2\n";
        let file = write_csv(content);
        assert!(matches!(
            load_panel(file.path(), &small_options()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn rejects_short_files() {
        let mut content = String::from("timestamp,a\n");
        for t in 0..5 {
            content.push_str(&format!("{t},1\n"));
        }
        let file = write_csv(&content);
        let options = LoadOptions::default();
        assert!(matches!(
            load_panel(file.path(), &options),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn missing_values_rejected_unless_forward_filled() {
        let content = "timestamp,a\r\n0,1\r\n1,\r\n2,NaN\r\n3,4\r\n4,5\r\n";
        let file = write_csv(content);
        assert!(matches!(
            load_panel(file.path(), &small_options()),
            Err(Error::Parse { row: 3, column: 2, .. })
        ));
        let options = LoadOptions {
            forward_fill: true,
            ..small_options()
        };
        let panel = load_panel(file.path(), &options).unwrap();
        assert_eq!(panel.series(0), &[1.0, 1.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn iso_timestamps_infer_interval() {
        let content = "timestamp,a\n\
            2012-03-01T00:00:00,1\n2012-03-01T00:10:00,2\n2012-03-01 00:20:00,3\n\
            2012-03-01T00:30:00,4\n2012-03-01T00:40:00,5\n";
        let file = write_csv(content);
        let panel = load_panel(file.path(), &small_options()).unwrap();
        assert_eq!(panel.interval_minutes(), 10);
        assert_eq!(panel.timestamp(2).to_string(), "2012-03-01 00:20:00");

        let gap = "timestamp,a\n\
            2012-03-01T00:00:00,1\n2012-03-01T00:10:00,2\n2012-03-01T00:30:00,3\n\
            2012-03-01T00:40:00,4\n2012-03-01T00:50:00,5\n";
        let file = write_csv(gap);
        assert!(matches!(
            load_panel(file.path(), &small_options()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn written_panel_reloads_exactly() {
        let spec = SyntheticSpec {
            node_count: 3,
            step_count: 40,
            ..SyntheticSpec::default()
        };
        let panel = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        write_panel(&panel, &path).unwrap();
        let back = load_panel(&path, &small_options()).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn zero_noise_constant_profile() {
        let spec = SyntheticSpec {
            node_count: 2,
            step_count: 50,
            base_profile: BaseProfile::Constant,
            base_level: 42.5,
            noise_scales: vec![0.0],
            ..SyntheticSpec::default()
        };
        let panel = generate_synthetic(&spec).unwrap();
        assert!(panel.values().as_slice().iter().all(|&v| v == 42.5));
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let spec = SyntheticSpec {
            seed: 11,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SyntheticSpec { seed: 12, ..spec.clone() };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn noise_scale_ratio_shows_in_detrended_std() {
        let spec = SyntheticSpec {
            node_count: 2,
            step_count: 10_000,
            noise_scales: vec![1.0, 10.0],
            heteroscedastic_by_time: false,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let panel = generate_synthetic(&spec).unwrap();
        let detrended_std = |node: usize| {
            let resid: Vec<f64> = (0..panel.step_count())
                .map(|t| panel.values().get(node, t) - spec.profile(panel.timestamp(t)))
                .collect();
            let mean = resid.iter().sum::<f64>() / resid.len() as f64;
            let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                / (resid.len() - 1) as f64;
            var.sqrt()
        };
        let ratio = detrended_std(1) / detrended_std(0);
        assert!((ratio - 10.0).abs() <= 1.0, "ratio {ratio}");
    }

    #[test]
    fn negative_noise_scale_is_rejected() {
        let spec = SyntheticSpec {
            noise_scales: vec![-1.0],
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn window_count_and_alignment() {
        let panel = ramp_panel(2, 10);
        let windows = make_windows(&panel, 3, 2).unwrap();
        assert_eq!(windows.len(), 6);
        let first = &windows[0];
        assert_eq!(first.anchor_index, 2);
        assert_eq!(first.target.get(0, 0), panel.values().get(0, 3));
        assert_eq!(first.input.row(1), &panel.series(1)[0..3]);
        assert!(windows.windows(2).all(|w| w[0].anchor_index + 1 == w[1].anchor_index));
        assert_eq!(windows.last().unwrap().anchor_index, 10 - 2 - 1);
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let panel = ramp_panel(1, 5);
        assert_eq!(make_windows(&panel, 3, 2).unwrap().len(), 1);
        assert!(matches!(
            make_windows(&panel, 4, 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn default_split_sizes_for_hundred_windows() {
        let panel = ramp_panel(1, 104);
        let windows = make_windows(&panel, 3, 2).unwrap();
        assert_eq!(windows.len(), 100);
        let splits = split_windows(windows, &SplitSpec::default()).unwrap();
        assert_eq!(splits.test.len(), 20);
        assert_eq!(splits.validation.len(), 10);
        assert_eq!(splits.chi1.len(), 14);
        assert_eq!(splits.chi2.len(), 14);
        assert_eq!(splits.train.len(), 42);
    }

    #[test]
    fn tiny_input_is_a_degenerate_split() {
        let panel = ramp_panel(1, 8);
        let windows = make_windows(&panel, 3, 2).unwrap();
        assert_eq!(windows.len(), 4);
        assert!(matches!(
            split_windows(windows, &SplitSpec::default()),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn split_validation_rejects_bad_fractions() {
        let spec = SplitSpec {
            train_frac: 0.8,
            ..SplitSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let spec = SplitSpec {
            chi2_frac_of_calibration: 1.0,
            ..SplitSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
