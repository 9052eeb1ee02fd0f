//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use siv_stark::electrostatics::{
    field_at, probe_report, solve_potential, ElectrodeGeometry, DEFAULT_RESOLUTION,
};
use siv_stark::fitting::{detect_peaks, fit_lorentzian, fit_stark, linear_term_test, StarkPoint};
use siv_stark::io;
use siv_stark::matcher::oracle::{agreement, oracle, OracleGrid};
use siv_stark::matcher::{
    match_frequencies, sample_ensemble, verify_plan, EnsembleSpec, MatchObjective,
    TuningConstraints,
};
use siv_stark::model::{
    propagate_field_uncertainty, stark_shift, transition_frequency, transition_ladder, Emitter,
    LevelStructure, Position, StarkParams, TransitionLabel,
};
use siv_stark::spectra::{
    amplitude_model, generate_voltage_series, LineModel, NoiseModel, ScanSettings, ScanWindow,
    Spectrum,
};
use siv_stark::FieldProbe;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn quarter_gap() -> Position {
    Position {
        x_um: 1.9,
        depth_nm: 100.0,
    }
}

fn field_pipeline() -> Outcome {
    let t = Instant::now();
    let map = match solve_potential(&ElectrodeGeometry::reference(), DEFAULT_RESOLUTION) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("solve failed: {e}")),
    };
    let r = probe_report(&map, &quarter_gap()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok_ext = within(r.e_ext, 0.82, 0.10);
    let ok_loc = within(r.e_local, 2.10, 0.10);
    let ok_time = secs <= 30.0;
    outcome(
        ok_ext && ok_loc && ok_time,
        format!(
            "E_ext {:.4} MV/m (want 0.82 ±10%: {}), E_local {:.4} MV/m (want 2.10 ±10%: {}), {:.2} s (≤ 30 s: {})",
            r.e_ext, ok_ext, r.e_local, ok_loc, secs, ok_time
        ),
    )
}

fn solver_checks() -> Outcome {
    // parallel plates, field tangential to the dielectric interface
    let d = 2.0;
    let volts = 3.0;
    let plate = ElectrodeGeometry::parallel_plate(d, volts, 5.7);
    let map = solve_potential(&plate, 128).unwrap();
    let uniform = volts / d;
    let worst = map
        .ex
        .iter()
        .zip(&map.ey)
        .map(|(ex, ey)| (ex.hypot(*ey) - uniform).abs() / uniform)
        .fold(0.0, f64::max);
    let ok_plate = worst <= 5e-3;

    let base = solve_potential(&ElectrodeGeometry::reference(), DEFAULT_RESOLUTION).unwrap();
    let mut g = ElectrodeGeometry::reference();
    g.applied_voltage = 37.0;
    let scaled = solve_potential(&g, DEFAULT_RESOLUTION).unwrap();
    let lin_err = base
        .ex
        .iter()
        .zip(&scaled.ex)
        .chain(base.ey.iter().zip(&scaled.ey))
        .map(|(a, b)| (b - 3.7 * a).abs())
        .fold(0.0, f64::max)
        / base.ex.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let ok_lin = lin_err <= 1e-6;

    let fine = solve_potential(&ElectrodeGeometry::reference(), 2 * DEFAULT_RESOLUTION).unwrap();
    let (ax, ay) = field_at(&base, &quarter_gap()).unwrap();
    let (bx, by) = field_at(&fine, &quarter_gap()).unwrap();
    let mesh = (ax.hypot(ay) - bx.hypot(by)).abs() / bx.hypot(by);
    let ok_mesh = mesh < 0.02;
    outcome(
        ok_plate && ok_lin && ok_mesh,
        format!(
            "plate non-uniformity {worst:.2e} (≤ 5e-3), linearity error {lin_err:.2e} (≤ 1e-6), mesh doubling change {:.3}% (< 2%)",
            100.0 * mesh
        ),
    )
}

fn position_systematic() -> Outcome {
    let map = solve_potential(&ElectrodeGeometry::reference(), DEFAULT_RESOLUTION).unwrap();
    let kappa = |x: f64| {
        probe_report(
            &map,
            &Position {
                x_um: x,
                depth_nm: 100.0,
            },
        )
        .unwrap()
        .kappa
    };
    let k0 = kappa(1.9);
    let d15 = (kappa(1.5) - k0) / k0;
    let d24 = (kappa(2.4) - k0) / k0;
    let prop = propagate_field_uncertainty(0.07);
    let ok = d15.abs() <= 0.07 && d24.abs() <= 0.07 && prop == 0.14;
    outcome(
        ok,
        format!(
            "kappa(1.9 µm) {k0:.4}; at 1.5 µm {:+.2}%, at 2.4 µm {:+.2}% (|·| ≤ 7%); propagate(0.07) = {prop}",
            100.0 * d15,
            100.0 * d24
        ),
    )
}

fn tuning_range() -> Outcome {
    let strong = StarkParams::new(0.0, 15.0, 0.0).unwrap();
    let weak = StarkParams::new(0.0, 1.4, 0.0).unwrap();
    let max_strong = stark_shift(&strong, 45.0)
        .abs()
        .max(stark_shift(&strong, -45.0).abs());
    let weak_45 = stark_shift(&weak, 45.0).abs();
    let ok_strong = max_strong >= 10.0 && within(max_strong, 15.0 * 45.0 * 45.0 / 1000.0, 1e-9);
    let ok_weak = within(weak_45, 1.4 * 45.0 * 45.0 / 1000.0, 1e-9) && (weak_45 - 2.8).abs() < 0.05;
    outcome(
        ok_strong && ok_weak,
        format!(
            "α=15: max |Δf| {max_strong:.6} GHz (≥ 10); α=1.4: |Δf(45)| {weak_45:.6} GHz (≈ 2.8)"
        ),
    )
}

/// Round-trip setup: 11 voltages over 0–100 V through a fixed kappa.
struct Pipeline {
    emitter: Emitter,
    probe: FieldProbe,
    voltages: Vec<f64>,
    scan: ScanSettings,
    model: LineModel,
}

impl Pipeline {
    fn new(truth: StarkParams, noise: NoiseModel) -> Self {
        Self {
            emitter: Emitter::single("E4", TransitionLabel::C, truth),
            probe: FieldProbe::new(1.9, 100.0, 0.21),
            voltages: (0..11).map(|i| 10.0 * i as f64).collect(),
            scan: ScanSettings {
                window: ScanWindow::Tracking {
                    half_width: 2.5,
                    points: 200,
                },
                integration_time: 1.5,
                noise,
                ..Default::default()
            },
            model: LineModel::default(),
        }
    }

    /// Smallest peak SNR over the series: peak counts over their shot noise.
    fn min_snr(&self) -> f64 {
        let t = self.scan.integration_time;
        self.voltages
            .iter()
            .map(|&v| {
                let a = amplitude_model(&self.model.amplitude, v);
                a * t / ((a + self.scan.dark_rate) * t).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn spectra(&self, seed: u64) -> Vec<Spectrum> {
        generate_voltage_series(
            &self.emitter,
            TransitionLabel::C,
            &self.probe,
            &self.voltages,
            &self.scan,
            &self.model,
            seed,
        )
        .unwrap()
    }

    fn points(&self, seed: u64) -> Option<Vec<StarkPoint>> {
        self.spectra(seed)
            .iter()
            .map(|s| {
                let g = detect_peaks(s).ok()?;
                let f = fit_lorentzian(s, &g[0]).ok()?;
                Some(StarkPoint::from_fit(&f, self.probe.kappa))
            })
            .collect()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fit_round_trip() -> Outcome {
    let t = Instant::now();
    let truth = StarkParams::new(406_600.0, 15.0, 3.0).unwrap();
    let noisy = Pipeline::new(truth, NoiseModel::Poisson);
    let snr = noisy.min_snr();
    let (mut ea, mut ee, mut ef) = (Vec::new(), Vec::new(), Vec::new());
    let mut failures = 0;
    for seed in 0..100u64 {
        match noisy.points(1_000 + seed).and_then(|p| fit_stark(&p).ok()) {
            Some(f) => {
                ea.push((f.alpha - truth.alpha).abs() / truth.alpha);
                ee.push((f.e0 - truth.e0).abs() / truth.e0);
                ef.push((f.f_max - truth.f_max).abs() * 1e3);
            }
            None => failures += 1,
        }
    }
    let (ma, me, mf) = (median(ea), median(ee), median(ef));

    let clean = Pipeline::new(truth, NoiseModel::Noiseless);
    let exact = clean.points(0).and_then(|p| fit_stark(&p).ok());
    let (na, ne, nf) = exact
        .map(|f| {
            (
                (f.alpha - truth.alpha).abs() / truth.alpha,
                (f.e0 - truth.e0).abs() / truth.e0,
                (f.f_max - truth.f_max).abs() / truth.f_max,
            )
        })
        .unwrap_or((f64::INFINITY, f64::INFINITY, f64::INFINITY));
    let secs = t.elapsed().as_secs_f64();
    let ok = snr >= 20.0
        && failures == 0
        && ma <= 0.03
        && me <= 0.05
        && mf <= 20.0
        && na.max(ne).max(nf) <= 1e-4
        && secs <= 60.0;
    outcome(
        ok,
        format!(
            "min SNR {snr:.1}; median |Δα|/α {:.2}% (≤ 3%), |ΔE0|/E0 {:.2}% (≤ 5%), |Δf_max| {mf:.2} MHz (≤ 20); failed pipelines {failures}; noiseless rel. errors {na:.1e}/{ne:.1e}/{nf:.1e} (≤ 1e-4); {secs:.1} s (≤ 60 s)",
            100.0 * ma,
            100.0 * me
        ),
    )
}

fn linear_term_null() -> Outcome {
    let truth = StarkParams::new(406_600.0, 15.0, 3.0).unwrap();
    let p = Pipeline::new(truth, NoiseModel::Poisson);
    let trials = 1000;
    let mut below = 0;
    let mut errors = 0;
    for seed in 0..trials as u64 {
        match p.points(50_000 + seed).map(|pts| linear_term_test(&pts)) {
            Some(Ok(t)) if t.significance.abs() < 3.0 => below += 1,
            Some(Ok(_)) => {}
            _ => errors += 1,
        }
    }
    let frac = below as f64 / trials as f64;
    outcome(
        frac >= 0.95 && errors == 0,
        format!(
            "|significance| < 3 in {:.1}% of {trials} seeds (≥ 95%), errors {errors}",
            100.0 * frac
        ),
    )
}

fn level_arithmetic() -> Outcome {
    let ladder = transition_ladder(&LevelStructure::new(406.7, 76.0, 273.0).unwrap());
    use TransitionLabel::*;
    let gaps = [
        ladder[&A] - ladder[&B],
        ladder[&B] - ladder[&C],
        ladder[&C] - ladder[&D],
    ];
    outcome(
        gaps == [76.0, 197.0, 76.0],
        format!("ladder spacings {:?} GHz (exactly 76 / 197 / 76)", gaps),
    )
}

fn matcher_oracle() -> Outcome {
    let grid = OracleGrid::default();
    let tc = TuningConstraints::default();
    let objectives = [MatchObjective::MaxMatched, MatchObjective::MinMaxResidual];
    let mut instances = 0;
    let mut disagreements = Vec::new();
    for n in 1..=5usize {
        for seed in 0..20u64 {
            let spec = EnsembleSpec {
                n,
                seed: 7_000 + 100 * n as u64 + seed,
                ..Default::default()
            };
            let ens = sample_ensemble(&spec).unwrap();
            for obj in objectives {
                let plan = match_frequencies(&ens, spec.label, &tc, obj).unwrap();
                let o = oracle(&ens, spec.label, &tc, obj, &grid).unwrap();
                if !agreement(&plan, &o, &grid).agrees {
                    disagreements.push((n, spec.seed, obj));
                }
                instances += 1;
            }
        }
    }
    let spec = EnsembleSpec::default();
    let ens = sample_ensemble(&spec).unwrap();
    let mut sound = true;
    let mut matched = Vec::new();
    for obj in objectives {
        let plan = match_frequencies(&ens, spec.label, &tc, obj).unwrap();
        sound &= verify_plan(&plan, &ens, &tc).is_ok();
        // independent re-check through the Stark law
        for (a, em) in plan.assignments.iter().zip(&ens) {
            if a.matched {
                let f = transition_frequency(em.params(spec.label).unwrap(), tc.kappa * a.voltage);
                sound &= ((f - plan.target) * 1e3).abs() <= tc.tolerance;
            }
        }
        matched.push(plan.matched_count);
    }
    outcome(
        disagreements.is_empty() && sound,
        format!(
            "{instances} small instances, disagreements {disagreements:?}; default 9-emitter plans sound: {sound} (matched {matched:?})"
        ),
    )
}

fn artifacts(seed: u64) -> Vec<Vec<u8>> {
    let truth = StarkParams::new(406_600.0, 15.0, 3.0).unwrap();
    let p = Pipeline::new(truth, NoiseModel::Poisson);
    let mut out = Vec::new();
    for s in p.spectra(seed) {
        let mut buf = Vec::new();
        io::write_spectrum_csv(&mut buf, &s).unwrap();
        out.push(buf);
    }
    let pts = p.points(seed).unwrap();
    out.push(io::to_json(&fit_stark(&pts).unwrap()).unwrap().into_bytes());
    let spec = EnsembleSpec {
        seed,
        ..Default::default()
    };
    let ens = sample_ensemble(&spec).unwrap();
    let tc = TuningConstraints::default();
    let mut buf = Vec::new();
    io::write_ensemble_csv(&mut buf, &ens, spec.label, |id| tc.kappa_for(id)).unwrap();
    out.push(buf);
    let plan = match_frequencies(&ens, spec.label, &tc, MatchObjective::MaxMatched).unwrap();
    out.push(io::to_json(&plan).unwrap().into_bytes());
    out
}

fn determinism() -> Outcome {
    let a = artifacts(11);
    let b = artifacts(11);
    let c = artifacts(12);
    let identical = a == b;
    let sensitive = a != c;
    outcome(
        identical && sensitive,
        format!(
            "{} artifacts byte-identical on repeat: {identical}; differ under another seed: {sensitive}",
            a.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("field pipeline at the quarter-gap probe", field_pipeline),
        (
            "solver checks: parallel plate, linearity, mesh",
            solver_checks,
        ),
        ("probe-position systematic", position_systematic),
        ("tuning range", tuning_range),
        ("fit round trip (Monte-Carlo)", fit_round_trip),
        ("linear-term null", linear_term_null),
        ("level arithmetic", level_arithmetic),
        ("matcher oracle equivalence and soundness", matcher_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        if !r.pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            i + 1,
            r.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
