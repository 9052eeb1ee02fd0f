//! Emitter ensembles and per-emitter voltage plans for frequency matching.
//!
//! Every emitter has its own bias. A shift is always to the red of `f_max`,
//! so the set of frequencies an emitter can reach over a voltage range is a
//! closed interval, and matching reduces to a 1-D search over the common
//! target frequency.

pub mod oracle;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{self, Emitter, LevelStructure, StarkParams, TransitionLabel};
use crate::units::{self, ALPHA_EPSILON, ALPHA_OBSERVED_MAX, ALPHA_OBSERVED_MIN};

/// FWHM of a normal law over its σ.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
const COARSE_POINTS: usize = 65;
const GOLDEN_TOL_GHZ: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("invalid ensemble spec: {0}")]
    InvalidSpec(String),
    #[error("invalid tuning constraints: {0}")]
    InvalidConstraints(String),
    #[error("emitter {id} has no transition {label}")]
    MissingTransition { id: String, label: TransitionLabel },
    #[error("target {target} GHz outside reachable interval [{lo}, {hi}] GHz")]
    Unreachable { target: f64, lo: f64, hi: f64 },
    #[error("ensemble is empty")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n: usize,
    pub label: TransitionLabel,
    /// Mean of `f_max`, GHz.
    #[serde(rename = "f0_center_GHz")]
    pub f0_center: f64,
    #[serde(rename = "f0_fwhm_GHz")]
    pub f0_fwhm: f64,
    #[serde(rename = "alpha_range_MHz_per_MVpm2")]
    pub alpha_range: [f64; 2],
    #[serde(rename = "e0_range_MVpm")]
    pub e0_range: [f64; 2],
    pub alpha_e0_correlation: f64,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        let label = TransitionLabel::C;
        Self {
            n: 9,
            label,
            f0_center: model::transition_ladder(&LevelStructure::default())[&label],
            f0_fwhm: 10.0,
            alpha_range: [ALPHA_OBSERVED_MIN, ALPHA_OBSERVED_MAX],
            e0_range: [0.0, 10.0],
            alpha_e0_correlation: 0.0,
            seed: 42,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: String| Err(MatchError::InvalidSpec(m));
        let [a0, a1] = self.alpha_range;
        let [e0, e1] = self.e0_range;
        if !(self.f0_fwhm > 0.0) || !self.f0_center.is_finite() {
            return bad(format!("f0_fwhm must be > 0, got {}", self.f0_fwhm));
        }
        if !(a0 > 0.0 && a0 <= a1 && a1.is_finite()) {
            return bad(format!(
                "alpha range [{a0}, {a1}] must be ordered and positive"
            ));
        }
        if !(e0 <= e1 && e0.is_finite() && e1.is_finite()) {
            return bad(format!("e0 range [{e0}, {e1}] must be ordered"));
        }
        if !(self.alpha_e0_correlation.abs() <= 1.0) {
            return bad(format!(
                "correlation {} outside [-1, 1]",
                self.alpha_e0_correlation
            ));
        }
        Ok(())
    }
}

/// Draws `f_max` from a normal law, `alpha` log-uniform and `e0` uniform,
/// with `alpha` and `e0` coupled through a Gaussian copula.
pub fn sample_ensemble(spec: &EnsembleSpec) -> Result<Vec<Emitter>, MatchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = Normal::standard();
    let rho = spec.alpha_e0_correlation;
    let sigma_f = spec.f0_fwhm / FWHM_PER_SIGMA;
    let (ln_lo, ln_hi) = (spec.alpha_range[0].ln(), spec.alpha_range[1].ln());
    let [e_lo, e_hi] = spec.e0_range;
    let width = (spec.n.max(1) - 1).to_string().len();

    Ok((0..spec.n)
        .map(|i| {
            let zf: f64 = StandardNormal.sample(&mut rng);
            let za: f64 = StandardNormal.sample(&mut rng);
            let zi: f64 = StandardNormal.sample(&mut rng);
            let ze = rho * za + (1.0 - rho * rho).max(0.0).sqrt() * zi;
            let alpha = (ln_lo + phi.cdf(za) * (ln_hi - ln_lo))
                .exp()
                .clamp(spec.alpha_range[0], spec.alpha_range[1]);
            let params = StarkParams {
                f_max: spec.f0_center + sigma_f * zf,
                alpha,
                e0: e_lo + phi.cdf(ze) * (e_hi - e_lo),
            };
            Emitter::single(format!("E{:0width$}", i + 1), spec.label, params)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConstraints {
    #[serde(rename = "v_range_V")]
    pub v_range: [f64; 2],
    /// Shared MV/m per V.
    pub kappa: f64,
    /// Per-emitter kappa keyed by emitter id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kappa_overrides: BTreeMap<String, f64>,
    #[serde(rename = "match_tolerance_MHz")]
    pub tolerance: f64,
}

impl Default for TuningConstraints {
    fn default() -> Self {
        Self {
            v_range: [0.0, 100.0],
            kappa: 0.21,
            kappa_overrides: BTreeMap::new(),
            tolerance: units::TRANSFORM_LIMIT_MHZ,
        }
    }
}

impl TuningConstraints {
    pub fn new(v_min: f64, v_max: f64, kappa: f64, tolerance: f64) -> Result<Self, MatchError> {
        let tc = Self {
            v_range: [v_min, v_max],
            kappa,
            kappa_overrides: BTreeMap::new(),
            tolerance,
        };
        tc.validate()?;
        Ok(tc)
    }

    /// A collapsed range (`v_min == v_max`) is accepted.
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: String| Err(MatchError::InvalidConstraints(m));
        let [lo, hi] = self.v_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return bad(format!("voltage range [{lo}, {hi}] must be ordered"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if let Some((id, k)) = self.kappa_overrides.iter().find(|(_, &k)| !(k > 0.0)) {
            return bad(format!("kappa for {id} must be > 0, got {k}"));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        Ok(())
    }

    pub fn kappa_for(&self, id: &str) -> f64 {
        self.kappa_overrides.get(id).copied().unwrap_or(self.kappa)
    }

    fn tolerance_ghz(&self) -> f64 {
        units::mhz_to_ghz(self.tolerance)
    }
}

/// Closed frequency interval, GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(rename = "lo_GHz")]
    pub lo: f64,
    #[serde(rename = "hi_GHz")]
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Distance from `f` to the interval; zero inside.
    pub fn distance(&self, f: f64) -> f64 {
        (self.lo - f).max(f - self.hi).max(0.0)
    }
}

/// One emitter reduced to what matching needs.
#[derive(Debug, Clone, Copy)]
struct Tunable {
    params: StarkParams,
    kappa: f64,
    v_min: f64,
    v_max: f64,
}

impl Tunable {
    fn new(
        em: &Emitter,
        label: TransitionLabel,
        tc: &TuningConstraints,
    ) -> Result<Self, MatchError> {
        let params = *em
            .params(label)
            .ok_or_else(|| MatchError::MissingTransition {
                id: em.id.clone(),
                label,
            })?;
        Ok(Self {
            params,
            kappa: tc.kappa_for(&em.id),
            v_min: tc.v_range[0],
            v_max: tc.v_range[1],
        })
    }

    fn freq(&self, v: f64) -> f64 {
        model::transition_frequency(&self.params, self.kappa * v)
    }

    fn vertex_voltage(&self) -> f64 {
        self.params.e0 / self.kappa
    }

    fn interval(&self) -> Interval {
        let (a, b) = (self.freq(self.v_min), self.freq(self.v_max));
        let vv = self.vertex_voltage();
        let hi = if vv >= self.v_min && vv <= self.v_max {
            self.params.f_max
        } else {
            a.max(b)
        };
        Interval { lo: a.min(b), hi }
    }

    /// Smallest-|v| feasible voltage reaching `target`.
    fn voltage_for(&self, target: f64) -> Result<f64, MatchError> {
        let iv = self.interval();
        let unreachable = MatchError::Unreachable {
            target,
            lo: iv.lo,
            hi: iv.hi,
        };
        if !iv.contains(target) {
            return Err(unreachable);
        }
        let slack = 1e-9 * (1.0 + self.v_min.abs().max(self.v_max.abs()));
        let inside = |v: f64| v >= self.v_min - slack && v <= self.v_max + slack;
        let candidates: Vec<f64> = if self.params.alpha < ALPHA_EPSILON {
            // flat response: every voltage in range works
            vec![0.0_f64.clamp(self.v_min, self.v_max)]
        } else {
            model::fields_for_frequency(&self.params, target)
                .map_err(|_| unreachable.clone())?
                .into_iter()
                .map(|e| e / self.kappa)
                .filter(|&v| inside(v))
                .collect()
        };
        let best = candidates
            .into_iter()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        match best {
            Some(v) => Ok(v.clamp(self.v_min, self.v_max)),
            // target sits on an endpoint to within rounding
            None => Ok(self.clamped_voltage(target)),
        }
    }

    /// Voltage whose frequency is nearest `target`.
    fn clamped_voltage(&self, target: f64) -> f64 {
        let iv = self.interval();
        let f = target.clamp(iv.lo, iv.hi);
        if let Ok(v) = self.voltage_for_exact(f) {
            return v;
        }
        let (a, b) = (self.v_min, self.v_max);
        let da = (self.freq(a) - f).abs();
        let db = (self.freq(b) - f).abs();
        if da < db || (da == db && (a.abs() < b.abs() || (a.abs() == b.abs() && a <= b))) {
            a
        } else {
            b
        }
    }

    fn voltage_for_exact(&self, f: f64) -> Result<f64, ()> {
        if self.params.alpha < ALPHA_EPSILON {
            return Err(());
        }
        let roots = model::fields_for_frequency(&self.params, f).map_err(|_| ())?;
        roots
            .into_iter()
            .map(|e| e / self.kappa)
            .filter(|&v| v >= self.v_min && v <= self.v_max)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)))
            .ok_or(())
    }

    fn assign(&self, id: &str, target: f64, tol_ghz: f64) -> Assignment {
        let v = self.clamped_voltage(target);
        let achieved = self.freq(v);
        let residual = units::ghz_to_mhz(achieved - target);
        Assignment {
            id: id.to_string(),
            voltage: v,
            achieved,
            residual,
            matched: (achieved - target).abs() <= tol_ghz,
        }
    }
}

/// Frequencies reachable over the voltage range.
pub fn reachable_interval(
    em: &Emitter,
    label: TransitionLabel,
    tc: &TuningConstraints,
) -> Result<Interval, MatchError> {
    tc.validate()?;
    Ok(Tunable::new(em, label, tc)?.interval())
}

/// Feasible voltage reaching `target` exactly, preferring the smallest |v|
/// (ties go to the smaller voltage).
pub fn voltage_for_target(
    em: &Emitter,
    label: TransitionLabel,
    target: f64,
    tc: &TuningConstraints,
) -> Result<f64, MatchError> {
    tc.validate()?;
    Tunable::new(em, label, tc)?.voltage_for(target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchObjective {
    /// Most emitters within tolerance of one target.
    MaxMatched,
    /// Smallest worst-case residual over all emitters.
    MinMaxResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: String,
    #[serde(rename = "voltage_V")]
    pub voltage: f64,
    #[serde(rename = "achieved_GHz")]
    pub achieved: f64,
    /// Achieved minus target.
    #[serde(rename = "residual_MHz")]
    pub residual: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPlan {
    pub label: TransitionLabel,
    pub objective: MatchObjective,
    #[serde(rename = "target_GHz")]
    pub target: f64,
    pub matched_count: usize,
    pub matched_fraction: f64,
    /// Largest |residual| among matched emitters for `MaxMatched`, over all
    /// emitters for `MinMaxResidual`.
    #[serde(rename = "objective_MHz")]
    pub objective_value: f64,
    #[serde(rename = "summed_abs_voltage_V")]
    pub summed_abs_voltage: f64,
    #[serde(rename = "match_tolerance_MHz")]
    pub tolerance: f64,
    pub assignments: Vec<Assignment>,
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL_GHZ {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Coarse grid over `[lo, hi]` then golden-section around the best node.
/// Returns `(x, f(x))`, preferring the lower `x` on ties.
fn grid_then_golden(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo, f(lo));
    }
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let node = |k: usize| {
        if k + 1 == COARSE_POINTS {
            hi
        } else {
            lo + step * k as f64
        }
    };
    let (mut best_k, mut best) = (0, f(lo));
    for k in 1..COARSE_POINTS {
        let v = f(node(k));
        if v < best {
            best_k = k;
            best = v;
        }
    }
    let a = node(best_k.saturating_sub(1));
    let b = node((best_k + 1).min(COARSE_POINTS - 1));
    let x = golden_min(f, a, b);
    let fx = f(x);
    if fx < best {
        (x, fx)
    } else {
        (node(best_k), best)
    }
}

/// Maximal target ranges where the number of expanded intervals covering a
/// point is largest, with that count.
fn max_coverage(intervals: &[Interval], tol: f64) -> (usize, Vec<(f64, f64)>) {
    // events: (position, +1 open / −1 close); opens sort before closes so
    // touching closed intervals count as overlapping
    let mut events: Vec<(f64, i32)> = intervals
        .iter()
        .flat_map(|iv| [(iv.lo - tol, 1), (iv.hi + tol, -1)])
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut depth = 0i32;
    let mut best = 0i32;
    for &(_, d) in &events {
        depth += d;
        best = best.max(depth);
    }
    let mut segments = Vec::new();
    let mut start = None;
    depth = 0;
    for &(x, d) in &events {
        depth += d;
        if depth == best && d > 0 {
            start = Some(x);
        } else if let (Some(s), true) = (start, d < 0) {
            segments.push((s, x));
            start = None;
        }
    }
    (best.max(0) as usize, segments)
}

/// Targets minimising the largest distance to `intervals`. The distance
/// is convex and piecewise linear, so the optimal set is the window
/// `[max lo − g, min hi + g]` with `g = max(0, (max lo − min hi) / 2)`.
fn minmax_window(intervals: &[Interval]) -> (f64, f64) {
    let max_lo = intervals
        .iter()
        .map(|iv| iv.lo)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_hi = intervals
        .iter()
        .map(|iv| iv.hi)
        .fold(f64::INFINITY, f64::min);
    if max_lo <= min_hi {
        (max_lo, min_hi)
    } else {
        let mid = 0.5 * (max_lo + min_hi);
        (mid, mid)
    }
}

/// Picks the target for `objective` and assigns every emitter.
pub fn match_frequencies(
    ensemble: &[Emitter],
    label: TransitionLabel,
    tc: &TuningConstraints,
    objective: MatchObjective,
) -> Result<MatchPlan, MatchError> {
    tc.validate()?;
    if ensemble.is_empty() {
        return Err(MatchError::EmptyEnsemble);
    }
    let tunables = ensemble
        .iter()
        .map(|em| Tunable::new(em, label, tc))
        .collect::<Result<Vec<_>, _>>()?;
    let intervals: Vec<Interval> = tunables.iter().map(Tunable::interval).collect();
    let tol = tc.tolerance_ghz();

    let summed_v = |target: f64| -> f64 {
        tunables
            .iter()
            .map(|t| t.clamped_voltage(target).abs())
            .sum()
    };

    // each candidate window holds targets of equal merit for the primary
    // objective; summed |v| decides within and between windows
    let windows: Vec<(f64, f64)> = match objective {
        MatchObjective::MaxMatched => max_coverage(&intervals, tol)
            .1
            .into_iter()
            .map(|(a, b)| {
                let covering: Vec<Interval> = intervals
                    .iter()
                    .filter(|iv| iv.lo - tol <= a && iv.hi + tol >= b)
                    .copied()
                    .collect();
                minmax_window(&covering)
            })
            .collect(),
        MatchObjective::MinMaxResidual => vec![minmax_window(&intervals)],
    };

    let mut best: Option<(f64, f64)> = None;
    for &(a, b) in &windows {
        let (x, s) = grid_then_golden(&summed_v, a, b);
        if best.is_none_or(|(_, bs)| s < bs) {
            best = Some((x, s));
        }
    }
    let (target, summed_abs_voltage) = best.expect("at least one segment");

    let assignments: Vec<Assignment> = tunables
        .iter()
        .zip(ensemble)
        .map(|(t, em)| t.assign(&em.id, target, tol))
        .collect();
    let matched_count = assignments.iter().filter(|a| a.matched).count();
    let objective_value = assignments
        .iter()
        .filter(|a| objective == MatchObjective::MinMaxResidual || a.matched)
        .map(|a| a.residual.abs())
        .fold(0.0, f64::max);
    Ok(MatchPlan {
        label,
        objective,
        target,
        matched_count,
        matched_fraction: matched_count as f64 / ensemble.len() as f64,
        objective_value,
        summed_abs_voltage,
        tolerance: tc.tolerance,
        assignments,
    })
}

/// Re-evaluates every matched assignment through the Stark law.
pub fn verify_plan(
    plan: &MatchPlan,
    ensemble: &[Emitter],
    tc: &TuningConstraints,
) -> Result<(), String> {
    for (a, em) in plan.assignments.iter().zip(ensemble) {
        let p = em
            .params(plan.label)
            .ok_or_else(|| format!("{}: no transition {}", em.id, plan.label))?;
        if a.voltage < tc.v_range[0] || a.voltage > tc.v_range[1] {
            return Err(format!("{}: voltage {} V outside range", a.id, a.voltage));
        }
        if a.matched {
            let f = model::transition_frequency(p, tc.kappa_for(&em.id) * a.voltage);
            let r = units::ghz_to_mhz(f - plan.target).abs();
            if r > tc.tolerance {
                return Err(format!("{}: residual {r} MHz exceeds tolerance", a.id));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn emitter(f_max: f64, alpha: f64, e0: f64) -> Emitter {
        Emitter::single(
            "X",
            TransitionLabel::C,
            StarkParams::new(f_max, alpha, e0).unwrap(),
        )
    }

    fn with_ids(mut v: Vec<Emitter>) -> Vec<Emitter> {
        for (i, e) in v.iter_mut().enumerate() {
            e.id = format!("E{i}");
        }
        v
    }

    const C: TransitionLabel = TransitionLabel::C;

    #[test]
    fn interval_from_endpoints() {
        let em = emitter(100.0, 15.0, 0.0);
        let iv = reachable_interval(&em, C, &TuningConstraints::default()).unwrap();
        assert_relative_eq!(iv.hi, 100.0);
        assert_relative_eq!(iv.lo, 100.0 - 6.615, max_relative = 1e-12);
    }

    #[test]
    fn interval_width_over_ten_ghz() {
        // κ·v_max − e0 = 26 MV/m
        let em = emitter(0.0, 15.0, 0.0);
        let tc = TuningConstraints::new(0.0, 26.0 / 0.21, 0.21, 90.0).unwrap();
        let iv = reachable_interval(&em, C, &tc).unwrap();
        assert_relative_eq!(iv.width(), 10.14, max_relative = 1e-12);
    }

    #[test]
    fn collapsed_range_is_a_point() {
        let em = emitter(0.0, 5.0, 2.0);
        let tc = TuningConstraints::new(30.0, 30.0, 0.21, 90.0).unwrap();
        let iv = reachable_interval(&em, C, &tc).unwrap();
        assert_eq!(iv.lo, iv.hi);
        assert_relative_eq!(voltage_for_target(&em, C, iv.lo, &tc).unwrap(), 30.0);
    }

    #[test]
    fn vertex_voltage_for_f_max() {
        let em = emitter(50.0, 15.0, 3.0);
        let v = voltage_for_target(&em, C, 50.0, &TuningConstraints::default()).unwrap();
        assert_relative_eq!(v, 3.0 / 0.21, max_relative = 1e-12);
    }

    #[test]
    fn below_interval_is_unreachable() {
        let em = emitter(50.0, 15.0, 3.0);
        let tc = TuningConstraints::default();
        let iv = reachable_interval(&em, C, &tc).unwrap();
        assert!(matches!(
            voltage_for_target(&em, C, iv.lo - 0.01, &tc),
            Err(MatchError::Unreachable { .. })
        ));
    }

    #[test]
    fn deep_target_beyond_default_range() {
        let em = emitter(0.0, 15.0, 3.0);
        let v_expected = (3.0 + (10_000.0f64 / 15.0).sqrt()) / 0.21;
        let wide = TuningConstraints::new(0.0, 200.0, 0.21, 90.0).unwrap();
        let v = voltage_for_target(&em, C, -10.0, &wide).unwrap();
        assert_relative_eq!(v, v_expected, max_relative = 1e-12);
        let p = em.params(C).unwrap();
        assert_relative_eq!(
            model::transition_frequency(p, 0.21 * v),
            -10.0,
            epsilon = 1e-9
        );
        assert!(matches!(
            voltage_for_target(&em, C, -10.0, &TuningConstraints::default()),
            Err(MatchError::Unreachable { .. })
        ));
        // the negative root becomes available once negative bias is allowed
        let both = TuningConstraints::new(-200.0, 200.0, 0.21, 90.0).unwrap();
        let v = voltage_for_target(&em, C, -10.0, &both).unwrap();
        assert_relative_eq!(
            v,
            (3.0 - (10_000.0f64 / 15.0).sqrt()) / 0.21,
            max_relative = 1e-12
        );
    }

    #[test]
    fn smallest_magnitude_root_wins() {
        let em = emitter(0.0, 10.0, 5.0);
        let tc = TuningConstraints::new(-100.0, 100.0, 0.5, 90.0).unwrap();
        // roots at E = 5 ± 4 → v = 2 and 18
        let v = voltage_for_target(&em, C, -0.16, &tc).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
        // symmetric roots: E = ±4 → tie goes to the smaller voltage
        let em = emitter(0.0, 10.0, 0.0);
        let v = voltage_for_target(&em, C, -0.16, &tc).unwrap();
        assert_relative_eq!(v, -8.0, max_relative = 1e-12);
    }

    #[test]
    fn single_emitter_matched_at_vertex() {
        let ens = vec![emitter(10.0, 8.0, 4.2)];
        for obj in [MatchObjective::MaxMatched, MatchObjective::MinMaxResidual] {
            let plan = match_frequencies(&ens, C, &TuningConstraints::default(), obj).unwrap();
            assert_eq!(plan.matched_count, 1);
            assert_eq!(plan.matched_fraction, 1.0);
            assert!(plan.assignments[0].residual.abs() < 1e-6);
            assert!(plan.target <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn two_overlapping_emitters_match_exactly() {
        let tc = TuningConstraints::new(0.0, 26.0 / 0.21, 0.21, 90.0).unwrap();
        let ens = with_ids(vec![emitter(0.0, 15.0, 0.0), emitter(5.0, 15.0, 0.0)]);
        for obj in [MatchObjective::MaxMatched, MatchObjective::MinMaxResidual] {
            let plan = match_frequencies(&ens, C, &tc, obj).unwrap();
            assert_eq!(plan.matched_count, 2);
            for a in &plan.assignments {
                assert!(a.residual.abs() < 1e-6, "{a:?}");
            }
            verify_plan(&plan, &ens, &tc).unwrap();
        }
    }

    #[test]
    fn disjoint_emitters_split_the_difference() {
        let tc = TuningConstraints::new(0.0, 10.0, 0.21, 90.0).unwrap();
        // intervals roughly [−0.066, 0] and [10 − 0.066, 10]
        let ens = with_ids(vec![emitter(0.0, 15.0, 0.0), emitter(10.0, 15.0, 0.0)]);
        let plan = match_frequencies(&ens, C, &tc, MatchObjective::MinMaxResidual).unwrap();
        let lo2 = 10.0 - 0.015 * 2.1f64.powi(2);
        assert_relative_eq!(plan.target, 0.5 * lo2, epsilon = 1e-8);
        assert_relative_eq!(
            plan.objective_value,
            1000.0 * 0.5 * lo2,
            max_relative = 1e-8
        );
        let plan = match_frequencies(&ens, C, &tc, MatchObjective::MaxMatched).unwrap();
        assert_eq!(plan.matched_count, 1);
    }

    #[test]
    fn empty_and_missing() {
        let tc = TuningConstraints::default();
        assert_eq!(
            match_frequencies(&[], C, &tc, MatchObjective::MaxMatched).unwrap_err(),
            MatchError::EmptyEnsemble
        );
        let ens = vec![emitter(0.0, 1.0, 0.0)];
        assert!(matches!(
            match_frequencies(&ens, TransitionLabel::A, &tc, MatchObjective::MaxMatched),
            Err(MatchError::MissingTransition { .. })
        ));
    }

    #[test]
    fn ensemble_empty_and_deterministic() {
        let spec = EnsembleSpec {
            n: 0,
            ..Default::default()
        };
        assert!(sample_ensemble(&spec).unwrap().is_empty());
        let spec = EnsembleSpec::default();
        assert_eq!(
            sample_ensemble(&spec).unwrap(),
            sample_ensemble(&spec).unwrap()
        );
    }

    #[test]
    fn ensemble_width_and_bounds() {
        let spec = EnsembleSpec {
            n: 10_000,
            seed: 7,
            ..Default::default()
        };
        let ens = sample_ensemble(&spec).unwrap();
        let f: Vec<f64> = ens.iter().map(|e| e.params(C).unwrap().f_max).collect();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let sd = (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (f.len() - 1) as f64).sqrt();
        assert!(((sd * FWHM_PER_SIGMA - 10.0) / 10.0).abs() < 0.05);
        for e in &ens {
            let p = e.params(C).unwrap();
            assert!(p.alpha >= 1.4 && p.alpha <= 15.0);
            assert!(p.e0 >= 0.0 && p.e0 <= 10.0);
        }
    }

    #[test]
    fn full_correlation_preserves_rank() {
        let spec = EnsembleSpec {
            n: 500,
            alpha_e0_correlation: 1.0,
            ..Default::default()
        };
        let ens = sample_ensemble(&spec).unwrap();
        let mut idx: Vec<usize> = (0..ens.len()).collect();
        let p = |i: usize| *ens[i].params(C).unwrap();
        idx.sort_by(|&a, &b| p(a).alpha.total_cmp(&p(b).alpha));
        for w in idx.windows(2) {
            assert!(p(w[0]).e0 <= p(w[1]).e0);
        }
    }

    #[test]
    fn invalid_inputs() {
        let spec = EnsembleSpec {
            f0_fwhm: 0.0,
            ..Default::default()
        };
        assert!(sample_ensemble(&spec).is_err());
        let spec = EnsembleSpec {
            alpha_range: [5.0, 1.0],
            ..Default::default()
        };
        assert!(sample_ensemble(&spec).is_err());
        assert!(TuningConstraints::new(10.0, 0.0, 0.21, 90.0).is_err());
        assert!(TuningConstraints::new(0.0, 10.0, 0.0, 90.0).is_err());
        assert!(TuningConstraints::new(0.0, 10.0, 0.21, 0.0).is_err());
    }

    #[test]
    fn coverage_segments() {
        let iv = |lo, hi| Interval { lo, hi };
        let (n, seg) = max_coverage(&[iv(0.0, 2.0), iv(1.0, 3.0), iv(5.0, 6.0)], 0.0);
        assert_eq!(n, 2);
        assert_eq!(seg, vec![(1.0, 2.0)]);
        let (n, seg) = max_coverage(&[iv(0.0, 1.0), iv(1.0, 2.0)], 0.0);
        assert_eq!(n, 2);
        assert_eq!(seg, vec![(1.0, 1.0)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plan_invariants(seed in 0u64..10_000, n in 1usize..12, vmax in 10.0f64..150.0) {
            let spec = EnsembleSpec { n, seed, ..Default::default() };
            let ens = sample_ensemble(&spec).unwrap();
            let tc = TuningConstraints::new(0.0, vmax, 0.21, 90.0).unwrap();
            let wider = TuningConstraints::new(0.0, vmax * 1.5, 0.21, 90.0).unwrap();
            let a = match_frequencies(&ens, C, &tc, MatchObjective::MaxMatched).unwrap();
            let b = match_frequencies(&ens, C, &wider, MatchObjective::MaxMatched).unwrap();
            prop_assert!(b.matched_count >= a.matched_count);
            prop_assert!(a.matched_count >= 1);
            verify_plan(&a, &ens, &tc).unwrap();
            let min_fmax = a.assignments.iter().zip(&ens)
                .filter(|(x, _)| x.matched)
                .map(|(_, e)| e.params(C).unwrap().f_max)
                .fold(f64::INFINITY, f64::min);
            prop_assert!(a.target <= min_fmax + units::mhz_to_ghz(tc.tolerance) + 1e-9);
            let m = match_frequencies(&ens, C, &tc, MatchObjective::MinMaxResidual).unwrap();
            verify_plan(&m, &ens, &tc).unwrap();
            prop_assert!(m.objective_value >= 0.0);
        }
    }
}
