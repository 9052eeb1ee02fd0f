//! Exhaustive grid search over target frequency and per-emitter voltage.
//!
//! Slow and coarse, used to cross-check [`match_frequencies`](super::match_frequencies)
//! on small instances.

use serde::{Deserialize, Serialize};

use super::{MatchError, MatchObjective, MatchPlan, Tunable, TuningConstraints};
use crate::model::{Emitter, TransitionLabel};
use crate::units;

/// Grid steps: target in MHz, voltage in V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    #[serde(rename = "target_step_MHz")]
    pub target_step: f64,
    #[serde(rename = "voltage_step_V")]
    pub voltage_step: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            target_step: 1.0,
            voltage_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub objective: MatchObjective,
    #[serde(rename = "target_GHz")]
    pub target: f64,
    pub matched_count: usize,
    /// Largest residual among matched emitters (max-matched) or over all
    /// emitters (min-max).
    #[serde(rename = "objective_MHz")]
    pub objective_value: f64,
    /// Largest frequency change between neighbouring voltage nodes, MHz.
    #[serde(rename = "voltage_resolution_MHz")]
    pub voltage_resolution: f64,
}

/// Sorted frequencies on the voltage grid, with the largest gap between
/// neighbouring voltage nodes.
fn frequency_table(t: &Tunable, step: f64) -> (Vec<f64>, f64) {
    let n = ((t.v_max - t.v_min) / step).round() as usize;
    let mut f: Vec<f64> = (0..=n)
        .map(|k| t.freq((t.v_min + step * k as f64).min(t.v_max)))
        .collect();
    let gap = f
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    f.sort_by(|a, b| a.total_cmp(b));
    (f, gap)
}

fn nearest_distance(sorted: &[f64], x: f64) -> f64 {
    let i = sorted.partition_point(|&v| v < x);
    let mut d = f64::INFINITY;
    if i < sorted.len() {
        d = d.min(sorted[i] - x);
    }
    if i > 0 {
        d = d.min(x - sorted[i - 1]);
    }
    d
}

pub fn oracle(
    ensemble: &[Emitter],
    label: TransitionLabel,
    tc: &TuningConstraints,
    objective: MatchObjective,
    grid: &OracleGrid,
) -> Result<OracleResult, MatchError> {
    tc.validate()?;
    if ensemble.is_empty() {
        return Err(MatchError::EmptyEnsemble);
    }
    let tunables = ensemble
        .iter()
        .map(|em| Tunable::new(em, label, tc))
        .collect::<Result<Vec<_>, _>>()?;
    let tables: Vec<(Vec<f64>, f64)> = tunables
        .iter()
        .map(|t| frequency_table(t, grid.voltage_step))
        .collect();
    let tol = tc.tolerance_ghz();
    let lo = tables.iter().map(|t| t.0[0]).fold(f64::INFINITY, f64::min) - tol;
    let hi = tables
        .iter()
        .map(|t| t.0[t.0.len() - 1])
        .fold(f64::NEG_INFINITY, f64::max)
        + tol;
    let step = units::mhz_to_ghz(grid.target_step);
    let n = ((hi - lo) / step).ceil() as usize;

    let mut best: Option<(f64, usize, f64)> = None;
    for k in 0..=n {
        let target = lo + step * k as f64;
        let d: Vec<f64> = tables
            .iter()
            .map(|t| nearest_distance(&t.0, target))
            .collect();
        let count = d.iter().filter(|&&x| x <= tol).count();
        let value = match objective {
            MatchObjective::MaxMatched => d
                .iter()
                .filter(|&&x| x <= tol)
                .fold(0.0_f64, |a, &b| a.max(b)),
            MatchObjective::MinMaxResidual => d.iter().fold(0.0_f64, |a, &b| a.max(b)),
        };
        let better = match (objective, best) {
            (_, None) => true,
            (MatchObjective::MaxMatched, Some((_, c, _))) => count > c,
            (MatchObjective::MinMaxResidual, Some((_, _, v))) => value < v,
        };
        if better {
            best = Some((target, count, value));
        }
    }
    let (target, matched_count, value) = best.expect("grid is non-empty");
    Ok(OracleResult {
        objective,
        target,
        matched_count,
        objective_value: units::ghz_to_mhz(value),
        voltage_resolution: units::ghz_to_mhz(tables.iter().map(|t| t.1).fold(0.0, f64::max)),
    })
}

/// How a plan compares with the oracle on the same instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// One grid step in frequency: target step plus voltage resolution.
    #[serde(rename = "grid_step_MHz")]
    pub grid_step: f64,
    /// Plan objective minus oracle objective (count difference for
    /// max-matched, MHz for min-max).
    pub difference: f64,
    pub agrees: bool,
}

/// Counts must be equal. A min-max plan solves the continuous problem, so it
/// may beat the grid by up to one step but never lose to it.
pub fn agreement(plan: &MatchPlan, o: &OracleResult, grid: &OracleGrid) -> Agreement {
    let step = grid.target_step + o.voltage_resolution;
    let (difference, agrees) = match plan.objective {
        MatchObjective::MaxMatched => {
            let d = plan.matched_count as f64 - o.matched_count as f64;
            (d, plan.matched_count == o.matched_count)
        }
        MatchObjective::MinMaxResidual => {
            let d = plan.objective_value - o.objective_value;
            (d, d <= 1e-6 && d >= -step)
        }
    };
    Agreement {
        grid_step: step,
        difference,
        agrees,
    }
}
