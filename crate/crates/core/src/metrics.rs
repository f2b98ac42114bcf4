//! Interval and point accuracy metrics, overall and per group.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::IntervalForecast;
use crate::Matrix;

/// One forecast cell next to its truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub node: usize,
    pub horizon: usize,
    pub truth: f64,
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
}

impl EvalRecord {
    pub fn covered(&self) -> bool {
        self.lower <= self.truth && self.truth <= self.upper
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower).abs()
    }
}

/// One record per cell with a finite truth.
pub fn records_from_forecast(f: &IntervalForecast, target: &Matrix) -> Result<Vec<EvalRecord>> {
    target.ensure_shape(f.node_count(), f.horizon(), "target")?;
    let mut out = Vec::with_capacity(f.node_count() * f.horizon());
    for node in 0..f.node_count() {
        for horizon in 0..f.horizon() {
            let truth = target.get(node, horizon);
            if !truth.is_finite() {
                continue;
            }
            let (lower, point, upper) = f.cell(node, horizon);
            out.push(EvalRecord {
                node,
                horizon,
                truth,
                lower,
                upper,
                point,
            });
        }
    }
    Ok(out)
}

fn non_empty(records: &[EvalRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric(format!("{what} of zero records")));
    }
    Ok(())
}

/// Fraction of truths inside the closed interval.
pub fn picp(records: &[EvalRecord]) -> Result<f64> {
    non_empty(records, "PICP")?;
    Ok(records.iter().filter(|r| r.covered()).count() as f64 / records.len() as f64)
}

/// Mean interval width.
pub fn mpiw(records: &[EvalRecord]) -> Result<f64> {
    non_empty(records, "MPIW")?;
    Ok(records.iter().map(EvalRecord::width).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    /// Records left out of MAPE because their truth is exactly zero.
    pub mape_excluded: usize,
}

pub fn point_metrics(records: &[EvalRecord]) -> Result<PointMetrics> {
    let (mae, rmse, mape, mape_excluded) = point_errors(records)?;
    let mape =
        mape.ok_or_else(|| Error::UndefinedMetric("MAPE with every truth equal to zero".into()))?;
    Ok(PointMetrics {
        mae,
        rmse,
        mape,
        mape_excluded,
    })
}

fn point_errors(records: &[EvalRecord]) -> Result<(f64, f64, Option<f64>, usize)> {
    non_empty(records, "point metrics")?;
    let n = records.len() as f64;
    let mae = records.iter().map(|r| (r.truth - r.point).abs()).sum::<f64>() / n;
    let mse = records.iter().map(|r| (r.truth - r.point).powi(2)).sum::<f64>() / n;
    let nonzero: Vec<&EvalRecord> = records.iter().filter(|r| r.truth != 0.0).collect();
    let mape = (!nonzero.is_empty()).then(|| {
        nonzero
            .iter()
            .map(|r| ((r.truth - r.point) / r.truth).abs())
            .sum::<f64>()
            / nonzero.len() as f64
    });
    Ok((mae, mse.sqrt(), mape, records.len() - nonzero.len()))
}

/// `picp - (1 - alpha_target)` in percentage points.
pub fn coverage_deviation(picp: f64, alpha_target: f64) -> f64 {
    (picp - (1.0 - alpha_target)) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub picp: f64,
    pub mpiw: f64,
    pub count: usize,
}

fn group_metrics(records: &[EvalRecord]) -> Result<GroupMetrics> {
    Ok(GroupMetrics {
        picp: picp(records)?,
        mpiw: mpiw(records)?,
        count: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub picp: f64,
    pub mpiw: f64,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every truth is zero.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    /// Signed percentage-point distance from the target coverage.
    pub coverage_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub overall: OverallMetrics,
    /// Indexed by node; `None` for nodes without records.
    pub per_node: Vec<Option<GroupMetrics>>,
    /// Indexed by horizon step (0-based).
    pub per_horizon: Vec<Option<GroupMetrics>>,
    pub n_records: usize,
    pub alpha_target: f64,
}

fn grouped(
    records: &[EvalRecord],
    groups: usize,
    key: impl Fn(&EvalRecord) -> usize,
) -> Result<Vec<Option<GroupMetrics>>> {
    let mut buckets = vec![Vec::new(); groups];
    for r in records {
        let k = key(r);
        if k >= groups {
            return Err(Error::Contract(format!("group index {k} outside 0..{groups}")));
        }
        buckets[k].push(*r);
    }
    buckets
        .iter()
        .map(|b| (!b.is_empty()).then(|| group_metrics(b)).transpose())
        .collect()
}

impl EvalReport {
    pub fn from_records(
        method: impl Into<String>,
        records: &[EvalRecord],
        nodes: usize,
        horizons: usize,
        alpha_target: f64,
    ) -> Result<Self> {
        let interval = group_metrics(records)?;
        let (mae, rmse, mape, mape_excluded) = point_errors(records)?;
        Ok(Self {
            method: method.into(),
            overall: OverallMetrics {
                picp: interval.picp,
                mpiw: interval.mpiw,
                mae,
                rmse,
                mape,
                mape_excluded,
                coverage_deviation: coverage_deviation(interval.picp, alpha_target),
            },
            per_node: grouped(records, nodes, |r| r.node)?,
            per_horizon: grouped(records, horizons, |r| r.horizon)?,
            n_records: records.len(),
            alpha_target,
        })
    }

    pub fn coverage_deviation(&self) -> f64 {
        coverage_deviation(self.overall.picp, self.alpha_target)
    }

    pub fn node_picps(&self) -> Vec<f64> {
        self.per_node.iter().flatten().map(|g| g.picp).collect()
    }

    /// Population standard deviation of per-node PICP.
    pub fn node_picp_dispersion(&self) -> f64 {
        crate::stats::mean_std(&self.node_picps()).1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per group: `group,index,picp,mpiw,count`, overall first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,group,index,picp,mpiw,count\n");
        let o = &self.overall;
        let _ = writeln!(out, "{},overall,,{},{},{}", self.method, o.picp, o.mpiw, self.n_records);
        for (label, groups) in [("node", &self.per_node), ("horizon", &self.per_horizon)] {
            for (k, g) in groups.iter().enumerate() {
                if let Some(g) = g {
                    let _ = writeln!(out, "{},{label},{k},{},{},{}", self.method, g.picp, g.mpiw, g.count);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(truth: f64, lower: f64, upper: f64) -> EvalRecord {
        EvalRecord {
            node: 0,
            horizon: 0,
            truth,
            lower,
            upper,
            point: (lower + upper) / 2.0,
        }
    }

    #[test]
    fn picp_examples() {
        let rs: Vec<_> = [5.0, 9.0, 20.0].iter().map(|&y| rec(y, 4.0, 10.0)).collect();
        assert!((picp(&rs).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(picp(&[rec(4.0, 4.0, 10.0)]).unwrap(), 1.0);
        assert_eq!(picp(&[rec(3.0, 3.0, 3.0)]).unwrap(), 1.0);
        assert!(matches!(picp(&[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mpiw_examples() {
        assert_eq!(mpiw(&[rec(0.0, 0.0, 2.0), rec(0.0, 1.0, 5.0)]).unwrap(), 3.0);
        assert_eq!(mpiw(&[rec(1.0, 1.0, 1.0)]).unwrap(), 0.0);
        assert!(mpiw(&[]).is_err());
    }

    #[test]
    fn point_examples() {
        let mut a = rec(10.0, 0.0, 0.0);
        a.point = 12.0;
        let mut b = rec(20.0, 0.0, 0.0);
        b.point = 16.0;
        let m = point_metrics(&[a, b]).unwrap();
        assert_eq!(m.mae, 3.0);
        assert!((m.rmse - 10f64.sqrt()).abs() < 1e-12);
        assert!((m.mape - 0.2).abs() < 1e-12);

        let mut perfect = rec(5.0, 0.0, 0.0);
        perfect.point = 5.0;
        let m = point_metrics(&[perfect]).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape), (0.0, 0.0, 0.0));

        let mut zero = rec(0.0, 0.0, 0.0);
        zero.point = 1.0;
        assert!(matches!(point_metrics(&[zero]), Err(Error::UndefinedMetric(_))));
        assert_eq!(point_metrics(&[zero, perfect]).unwrap().mape_excluded, 1);
    }

    #[test]
    fn deviation_examples() {
        assert!((coverage_deviation(0.911, 0.1) - 1.1).abs() < 1e-9);
        assert!(coverage_deviation(0.9, 0.1).abs() < 1e-12);
        assert!((coverage_deviation(0.45, 0.1) + 45.0).abs() < 1e-9);
    }

    #[test]
    fn report_groups_and_csv() {
        let mut rs = Vec::new();
        for node in 0..3 {
            for horizon in 0..2 {
                let mut r = rec(1.0 + node as f64, 0.0, 2.0);
                r.node = node;
                r.horizon = horizon;
                rs.push(r);
            }
        }
        let report = EvalReport::from_records("dqr", &rs, 3, 2, 0.1).unwrap();
        assert_eq!(report.per_node.len(), 3);
        assert_eq!(report.node_picps(), vec![1.0, 1.0, 0.0]);
        assert_eq!(report.per_horizon.iter().flatten().map(|g| g.count).sum::<usize>(), 6);
        let csv = report.to_csv();
        assert_eq!(csv.lines().filter(|l| l.contains(",node,")).count(), 3);
        let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
        prop::collection::vec((0usize..4, -10.0f64..10.0, -10.0f64..10.0, 0.0f64..5.0), 1..80).prop_map(|v| {
            v.into_iter()
                .map(|(node, y, l, w)| EvalRecord {
                    node,
                    horizon: 0,
                    truth: y,
                    lower: l,
                    upper: l + w,
                    point: l + w / 2.0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn widening_never_lowers_picp(rs in records(), d in 0.0f64..5.0) {
            let wide: Vec<_> = rs.iter().map(|r| EvalRecord { lower: r.lower - d, upper: r.upper + d, ..*r }).collect();
            prop_assert!(picp(&wide).unwrap() >= picp(&rs).unwrap());
            prop_assert!((mpiw(&wide).unwrap() - mpiw(&rs).unwrap() - 2.0 * d).abs() < 1e-9);
        }

        #[test]
        fn mpiw_shift_and_scale(rs in records(), s in -50.0f64..50.0, c in 0.1f64..10.0) {
            let shifted: Vec<_> = rs.iter().map(|r| EvalRecord { lower: r.lower + s, upper: r.upper + s, ..*r }).collect();
            prop_assert!((mpiw(&shifted).unwrap() - mpiw(&rs).unwrap()).abs() < 1e-9);
            let scaled: Vec<_> = rs.iter().map(|r| EvalRecord { lower: r.lower * c, upper: r.upper * c, ..*r }).collect();
            prop_assert!((mpiw(&scaled).unwrap() - c * mpiw(&rs).unwrap()).abs() < 1e-9 * (1.0 + c * mpiw(&rs).unwrap()));
        }

        #[test]
        fn overall_is_weighted_mean_of_groups(rs in records()) {
            let report = EvalReport::from_records("m", &rs, 4, 1, 0.1).unwrap();
            let groups: Vec<_> = report.per_node.iter().flatten().collect();
            let n: usize = groups.iter().map(|g| g.count).sum();
            prop_assert_eq!(n, report.n_records);
            let picp_w = groups.iter().map(|g| g.picp * g.count as f64).sum::<f64>() / n as f64;
            let mpiw_w = groups.iter().map(|g| g.mpiw * g.count as f64).sum::<f64>() / n as f64;
            prop_assert!((picp_w - report.overall.picp).abs() < 1e-12);
            prop_assert!((mpiw_w - report.overall.mpiw).abs() < 1e-9);
        }
    }
}
