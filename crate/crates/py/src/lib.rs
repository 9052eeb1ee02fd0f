//! Python bindings. Results come back as plain dicts and lists with the same
//! keys as the JSON written by the command-line tool.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pythonize::pythonize;
use serde::Serialize;
use siv_stark::electrostatics::{
    probe_report, solve_potential, ElectrodeGeometry, FieldError, FieldProbe,
};
use siv_stark::fitting::{self, FitError, PeakGuess, StarkPoint};
use siv_stark::matcher::{self, EnsembleSpec, MatchObjective, TuningConstraints};
use siv_stark::model::{self, Emitter, LevelStructure, Position, StarkParams, TransitionLabel};
use siv_stark::spectra::{self, LineModel, NoiseModel, ScanSettings, Spectrum};

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    pythonize(py, value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn fit_err(e: FitError) -> PyErr {
    match e {
        FitError::NotConverged(_) | FitError::IllConditioned | FitError::NoPeakFound => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => invalid(other),
    }
}

fn params(f_max: f64, alpha: f64, e0: f64) -> PyResult<StarkParams> {
    StarkParams::new(f_max, alpha, e0).map_err(invalid)
}

fn label(s: &str) -> PyResult<TransitionLabel> {
    s.parse().map_err(invalid)
}

/// Frequency in GHz at local field `e_local` (MV/m).
#[pyfunction]
fn transition_frequency(f_max: f64, alpha: f64, e0: f64, e_local: f64) -> PyResult<f64> {
    Ok(model::transition_frequency(
        &params(f_max, alpha, e0)?,
        e_local,
    ))
}

/// Lorentz local field `E_ext (ε + 2) / 3`.
#[pyfunction]
fn lorentz_local_field(e_ext: f64, epsilon: f64) -> PyResult<f64> {
    if epsilon.is_nan() || epsilon < 1.0 {
        return Err(invalid(format!("epsilon must be >= 1, got {epsilon}")));
    }
    Ok(siv_stark::electrostatics::lorentz_local_field(
        e_ext, epsilon,
    ))
}

#[pyfunction]
#[pyo3(signature = (zpl_thz=406.7, gs_split_ghz=50.0, es_split_ghz=250.0))]
fn transition_ladder(
    py: Python<'_>,
    zpl_thz: f64,
    gs_split_ghz: f64,
    es_split_ghz: f64,
) -> PyResult<Bound<'_, PyAny>> {
    let l = LevelStructure::new(zpl_thz, gs_split_ghz, es_split_ghz).map_err(invalid)?;
    to_py(py, &model::transition_ladder(&l))
}

/// Solves the coplanar electrodes and reports the field at the probe.
#[pyfunction]
#[pyo3(signature = (gap_um=7.6, electrode_width_um=10.0, voltage=10.0, epsilon=5.7, x_um=1.9, depth_nm=100.0, resolution=304))]
#[allow(clippy::too_many_arguments)]
fn field_report(
    py: Python<'_>,
    gap_um: f64,
    electrode_width_um: f64,
    voltage: f64,
    epsilon: f64,
    x_um: f64,
    depth_nm: f64,
    resolution: usize,
) -> PyResult<Bound<'_, PyAny>> {
    let g = ElectrodeGeometry::coplanar(gap_um, electrode_width_um, voltage, epsilon);
    let pos = Position { x_um, depth_nm };
    let report = py
        .detach(|| solve_potential(&g, resolution).and_then(|map| probe_report(&map, &pos)))
        .map_err(|e| match e {
            FieldError::NoConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
            other => invalid(other),
        })?;
    to_py(py, &report)
}

/// One PLE scan per voltage with the default line model.
#[pyfunction]
#[pyo3(signature = (f_max, alpha, e0, kappa, voltages, seed=0, integration_time=1.5, noiseless=false))]
#[allow(clippy::too_many_arguments)]
fn simulate_series<'py>(
    py: Python<'py>,
    f_max: f64,
    alpha: f64,
    e0: f64,
    kappa: f64,
    voltages: Vec<f64>,
    seed: u64,
    integration_time: f64,
    noiseless: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let em = Emitter::single("py", TransitionLabel::C, params(f_max, alpha, e0)?);
    let probe = FieldProbe::new(1.9, 100.0, kappa);
    let scan = ScanSettings {
        integration_time,
        noise: if noiseless {
            NoiseModel::Noiseless
        } else {
            NoiseModel::Poisson
        },
        ..Default::default()
    };
    let series = spectra::generate_voltage_series(
        &em,
        TransitionLabel::C,
        &probe,
        &voltages,
        &scan,
        &LineModel::default(),
        seed,
    )
    .map_err(invalid)?;
    to_py(py, &series)
}

/// Lorentzian fit of one scan; the strongest detected peak seeds it unless
/// `guess_center` (GHz) is given.
#[pyfunction]
#[pyo3(signature = (detunings, counts, integration_time, voltage=0.0, guess_center=None))]
fn fit_spectrum(
    py: Python<'_>,
    detunings: Vec<f64>,
    counts: Vec<f64>,
    integration_time: f64,
    voltage: f64,
    guess_center: Option<f64>,
) -> PyResult<Bound<'_, PyAny>> {
    let s = Spectrum::new(voltage, detunings, counts, integration_time, 0).map_err(invalid)?;
    let guesses = fitting::detect_peaks(&s).map_err(fit_err)?;
    let guess = match guess_center {
        Some(center) => PeakGuess {
            center,
            ..guesses[0]
        },
        None => guesses[0],
    };
    let fit = fitting::fit_lorentzian(&s, &guess).map_err(fit_err)?;
    to_py(py, &fit)
}

fn points(fields: &[f64], centers: &[f64], sigmas: Option<Vec<f64>>) -> PyResult<Vec<StarkPoint>> {
    if fields.len() != centers.len() {
        return Err(invalid("fields and centers differ in length"));
    }
    let sigmas = sigmas.unwrap_or_else(|| vec![0.0; fields.len()]);
    if sigmas.len() != fields.len() {
        return Err(invalid("center_sigmas differs in length"));
    }
    Ok(fields
        .iter()
        .zip(centers)
        .zip(&sigmas)
        .map(|((&e, &f), &s)| StarkPoint::new(e, f, s))
        .collect())
}

/// Quadratic Stark fit of line centres (GHz) against local field (MV/m).
#[pyfunction]
#[pyo3(signature = (fields, centers, center_sigmas=None))]
fn fit_stark(
    py: Python<'_>,
    fields: Vec<f64>,
    centers: Vec<f64>,
    center_sigmas: Option<Vec<f64>>,
) -> PyResult<Bound<'_, PyAny>> {
    let fit = fitting::fit_stark(&points(&fields, &centers, center_sigmas)?).map_err(fit_err)?;
    to_py(py, &fit)
}

#[pyfunction]
#[pyo3(signature = (fields, centers, center_sigmas=None))]
fn linear_term_test(
    py: Python<'_>,
    fields: Vec<f64>,
    centers: Vec<f64>,
    center_sigmas: Option<Vec<f64>>,
) -> PyResult<Bound<'_, PyAny>> {
    let t =
        fitting::linear_term_test(&points(&fields, &centers, center_sigmas)?).map_err(fit_err)?;
    to_py(py, &t)
}

/// Samples an ensemble and plans voltages bringing it to one frequency.
#[pyfunction]
#[pyo3(signature = (n=9, seed=42, objective="max-matched", transition="C", v_min=0.0, v_max=100.0, kappa=0.21, tolerance_mhz=90.0))]
#[allow(clippy::too_many_arguments)]
fn match_ensemble<'py>(
    py: Python<'py>,
    n: usize,
    seed: u64,
    objective: &str,
    transition: &str,
    v_min: f64,
    v_max: f64,
    kappa: f64,
    tolerance_mhz: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let objective = match objective {
        "max-matched" => MatchObjective::MaxMatched,
        "min-max-residual" => MatchObjective::MinMaxResidual,
        other => return Err(invalid(format!("unknown objective {other:?}"))),
    };
    let label = label(transition)?;
    let spec = EnsembleSpec {
        n,
        seed,
        label,
        f0_center: model::transition_ladder(&LevelStructure::default())[&label],
        ..Default::default()
    };
    let ensemble = matcher::sample_ensemble(&spec).map_err(invalid)?;
    let tc = TuningConstraints::new(v_min, v_max, kappa, tolerance_mhz).map_err(invalid)?;
    let plan = matcher::match_frequencies(&ensemble, label, &tc, objective).map_err(invalid)?;
    to_py(py, &plan)
}

#[pymodule]
fn sivstark(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(transition_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(lorentz_local_field, m)?)?;
    m.add_function(wrap_pyfunction!(transition_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(field_report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_series, m)?)?;
    m.add_function(wrap_pyfunction!(fit_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stark, m)?)?;
    m.add_function(wrap_pyfunction!(linear_term_test, m)?)?;
    m.add_function(wrap_pyfunction!(match_ensemble, m)?)?;
    Ok(())
}
