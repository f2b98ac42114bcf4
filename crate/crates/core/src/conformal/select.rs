use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Observation;

/// Interval `[lower - delta, upper + delta]`; a crossed result collapses to
/// the midpoint of the original interval.
#[inline]
pub fn widen(lower: f64, upper: f64, delta: f64) -> (f64, f64) {
    let (lo, hi) = (lower - delta, upper + delta);
    if hi < lo {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    } else {
        (lo, hi)
    }
}

/// Mean initial interval width of a cell, floored at machine epsilon. Width
/// terms of the selection objective are divided by it.
pub fn width_normalizer(obs: &[Observation]) -> f64 {
    let mean = obs.iter().map(|o| o.upper - o.lower).sum::<f64>() / obs.len() as f64;
    mean.max(f64::EPSILON)
}

/// Coverage/width trade-off used to rank candidate adjustments:
/// `score = -lambda * credit(coverage) + (1 - lambda) * width`.
///
/// Without a target the credit is the raw coverage. With a target coverage
/// `c`, coverage above `c` earns nothing and the credit is the fraction of
/// the target reached, in units of the allowed miscoverage:
/// `min(coverage, c) / (c * (1 - c))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionObjective {
    pub lambda: f64,
    pub coverage_target: Option<f64>,
}

impl SelectionObjective {
    pub fn raw(lambda: f64) -> Self {
        Self {
            lambda,
            coverage_target: None,
        }
    }

    pub fn with_target(lambda: f64, coverage_target: f64) -> Self {
        Self {
            lambda,
            coverage_target: Some(coverage_target),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if let Some(c) = self.coverage_target {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Config(format!("coverage target {c} outside (0, 1)")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn credit(&self, coverage: f64) -> f64 {
        match self.coverage_target {
            None => coverage,
            Some(c) => coverage.min(c) / (c * (1.0 - c)),
        }
    }

    #[inline]
    pub fn score(&self, coverage: f64, normalized_width: f64) -> f64 {
        -self.lambda * self.credit(coverage) + (1.0 - self.lambda) * normalized_width
    }
}

/// Coverage and normalized mean width of the cell's intervals after
/// widening by `delta`.
pub fn evaluate_candidate(obs: &[Observation], delta: f64, normalizer: f64) -> (f64, f64) {
    let mut covered = 0usize;
    let mut width = 0.0;
    for o in obs {
        let (lo, hi) = widen(o.lower, o.upper, delta);
        if lo <= o.truth && o.truth <= hi {
            covered += 1;
        }
        width += hi - lo;
    }
    let n = obs.len() as f64;
    (covered as f64 / n, width / n / normalizer)
}

/// Index of the lowest score over `(coverage, normalized width)` pairs; ties
/// go to the earliest (narrowest) candidate.
pub fn argmin_score(evaluations: &[(f64, f64)], objective: &SelectionObjective) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (k, &(cov, width)) in evaluations.iter().enumerate() {
        let score = objective.score(cov, width);
        if score < best_score {
            best = k;
            best_score = score;
        }
    }
    best
}

/// Outcome of the per-cell search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSelection {
    pub index: usize,
    pub delta: f64,
    pub coverage: f64,
    pub width: f64,
    pub score: f64,
}

/// Scores every candidate on the cell's χ2 observations and returns the
/// minimizer.
pub fn select_cell_delta(
    candidates: &[f64],
    chi2: &[Observation],
    objective: &SelectionObjective,
) -> Result<CellSelection> {
    if candidates.is_empty() || chi2.is_empty() {
        return Err(Error::MissingCell);
    }
    let normalizer = width_normalizer(chi2);
    let evaluations: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&delta| evaluate_candidate(chi2, delta, normalizer))
        .collect();
    let index = argmin_score(&evaluations, objective);
    let (coverage, width) = evaluations[index];
    Ok(CellSelection {
        index,
        delta: candidates[index],
        coverage,
        width,
        score: objective.score(coverage, width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(lower: f64, upper: f64, truth: f64) -> Observation {
        Observation {
            lower,
            upper,
            truth,
        }
    }

    #[test]
    fn widen_examples() {
        assert_eq!(widen(4.0, 8.0, 0.0), (4.0, 8.0));
        assert_eq!(widen(4.0, 8.0, 2.0), (2.0, 10.0));
        assert_eq!(widen(4.0, 8.0, -1.0), (5.0, 7.0));
        assert_eq!(widen(4.0, 8.0, -3.0), (6.0, 6.0));
    }

    #[test]
    fn three_candidate_example() {
        let evals = [(0.5, 0.2), (0.9, 0.5), (1.0, 1.0)];
        let objective = SelectionObjective::raw(0.5);
        let scores: Vec<f64> = evals.iter().map(|&(c, w)| objective.score(c, w)).collect();
        for (s, e) in scores.iter().zip([-0.15, -0.20, 0.0]) {
            assert!((s - e).abs() < 1e-12, "{scores:?}");
        }
        assert_eq!(argmin_score(&evals, &objective), 1);
    }

    #[test]
    fn extreme_lambdas() {
        // Truths spread so that coverage keeps growing with delta until 4.
        let chi2: Vec<Observation> = (0..8)
            .map(|k| obs(0.0, 1.0, 1.0 + k as f64 * 0.5))
            .collect();
        let candidates = [-0.2, 0.5, 1.0, 3.5, 4.0, 6.0];
        let by_coverage = select_cell_delta(&candidates, &chi2, &SelectionObjective::raw(1.0)).unwrap();
        assert_eq!(by_coverage.delta, 3.5);
        assert_eq!(by_coverage.coverage, 1.0);
        let by_width = select_cell_delta(&candidates, &chi2, &SelectionObjective::raw(0.0)).unwrap();
        assert_eq!(by_width.index, 0);
    }

    #[test]
    fn capped_credit_stops_at_target() {
        let chi2: Vec<Observation> = (0..10).map(|k| obs(-1.0, 1.0, k as f64 * 0.25)).collect();
        // deltas needed per truth: max(0, t - 1) -> coverage reaches 0.9 at delta 1.0
        let candidates = [0.0, 0.5, 1.0, 1.25];
        let pick = select_cell_delta(&candidates, &chi2, &SelectionObjective::with_target(1.0, 0.9)).unwrap();
        assert_eq!(pick.delta, 1.0);
        assert!((pick.coverage - 0.9).abs() < 1e-12);
        let raw = select_cell_delta(&candidates, &chi2, &SelectionObjective::raw(1.0)).unwrap();
        assert_eq!(raw.delta, 1.25);
    }

    #[test]
    fn empty_cell_is_missing() {
        assert!(matches!(
            select_cell_delta(&[0.0], &[], &SelectionObjective::raw(0.5)),
            Err(Error::MissingCell)
        ));
    }
}
