//! Synthetic voltage-dependent PLE scans.
//!
//! A scan is a Lorentzian line on a dark-count floor. The line centre follows
//! the quadratic Stark law at `E = κ V`, its width grows linearly with
//! `|E − E0|`, and its height follows a charge-state curve that vanishes
//! under negative bias. Counts are Poisson draws from a seeded ChaCha stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electrostatics::FieldProbe;
use crate::model::{transition_frequency, Emitter, TransitionLabel};
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("emitter {id} has no parameters for transition {label}")]
    MissingTransition { id: String, label: TransitionLabel },
    #[error(
        "line at {center_ghz:.4} GHz (V = {voltage} V) lies outside the scan [{lo:.4}, {hi:.4}] GHz"
    )]
    LineOutsideScan {
        voltage: f64,
        center_ghz: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid scan: {0}")]
    InvalidScan(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("{} voltage(s) failed: {}", .0.len(), summarize(.0))]
    Series(Vec<(f64, SpectrumError)>),
}

fn summarize(failures: &[(f64, SpectrumError)]) -> String {
    failures
        .iter()
        .map(|(v, _)| format!("{v} V"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Peak-normalised Lorentzian: `amplitude` at `center`, half of it at
/// `center ± fwhm/2`. Detuning and centre in GHz, `fwhm_mhz` in MHz.
pub fn lorentzian(detuning: f64, center: f64, fwhm_mhz: f64, amplitude: f64) -> f64 {
    let hw = 0.5 * units::mhz_to_ghz(fwhm_mhz);
    let u = (detuning - center) / hw;
    amplitude / (1.0 + u * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShapeParams {
    /// FWHM at `E = E0`, MHz.
    pub gamma0: f64,
    /// Broadening per MV/m of `|E − E0|`, MHz.
    pub gamma_slope: f64,
    /// Lifetime-limited FWHM, MHz.
    pub transform_limit: f64,
}

impl Default for LineShapeParams {
    fn default() -> Self {
        Self {
            gamma0: 400.0,
            gamma_slope: 5.0,
            transform_limit: units::TRANSFORM_LIMIT_MHZ,
        }
    }
}

impl LineShapeParams {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        if !(self.transform_limit > 0.0 && self.gamma0 >= self.transform_limit) {
            return Err(SpectrumError::InvalidScan(format!(
                "need gamma0 >= transform limit > 0 (got {} and {})",
                self.gamma0, self.transform_limit
            )));
        }
        if !(self.gamma_slope >= 0.0) {
            return Err(SpectrumError::InvalidScan(
                "gamma_slope must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Line FWHM (MHz) at local field `e_local` for an emitter with offset `e0`.
pub fn linewidth_model(ls: &LineShapeParams, e_local: f64, e0: f64) -> f64 {
    ls.gamma0 + ls.gamma_slope * (e_local - e0).abs()
}

/// Peak count rate versus applied voltage: a logistic turn-on times a
/// half-Gaussian roll-off above `v_peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeModel {
    /// counts/s
    pub a_max: f64,
    pub v_on: f64,
    pub w_on: f64,
    pub v_peak: f64,
    pub w_off: f64,
}

impl Default for AmplitudeModel {
    fn default() -> Self {
        Self {
            a_max: 2000.0,
            v_on: 5.0,
            w_on: 10.0,
            v_peak: 75.0,
            w_off: 60.0,
        }
    }
}

impl AmplitudeModel {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        if !(self.a_max > 0.0 && self.w_on > 0.0 && self.w_off > 0.0) {
            return Err(SpectrumError::InvalidScan(
                "amplitude model needs a_max, w_on, w_off > 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn amplitude_model(am: &AmplitudeModel, v: f64) -> f64 {
    let turn_on = 1.0 / (1.0 + (-(v - am.v_on) / am.w_on).exp());
    let over = (v - am.v_peak).max(0.0);
    let roll_off = if am.w_off.is_infinite() {
        1.0
    } else {
        (-over * over / (2.0 * am.w_off * am.w_off)).exp()
    };
    am.a_max * turn_on * roll_off
}

/// Everything about the line except where it sits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LineModel {
    pub shape: LineShapeParams,
    pub amplitude: AmplitudeModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Poisson,
    /// Counts equal their expectation (the long-integration limit).
    Noiseless,
}

/// Detuning grid of one scan, GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScanWindow {
    Fixed {
        start: f64,
        stop: f64,
        points: usize,
    },
    /// Centred on the predicted line position, as when the laser scan is
    /// re-centred for every voltage.
    Tracking { half_width: f64, points: usize },
}

impl ScanWindow {
    fn points(&self) -> usize {
        match *self {
            Self::Fixed { points, .. } | Self::Tracking { points, .. } => points,
        }
    }

    fn bounds(&self, predicted_center: f64) -> (f64, f64) {
        match *self {
            Self::Fixed { start, stop, .. } => (start, stop),
            Self::Tracking { half_width, .. } => {
                (predicted_center - half_width, predicted_center + half_width)
            }
        }
    }

    pub fn grid(&self, predicted_center: f64) -> Vec<f64> {
        let (lo, hi) = self.bounds(predicted_center);
        let n = self.points();
        let m = (n - 1) as f64;
        (0..n)
            .map(|k| (lo * (m - k as f64) + hi * k as f64) / m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub window: ScanWindow,
    /// Dwell per detuning bin, s.
    pub integration_time: f64,
    /// counts/s
    pub dark_rate: f64,
    pub noise: NoiseModel,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            window: ScanWindow::Tracking {
                half_width: 2.5,
                points: 200,
            },
            integration_time: 1.0,
            dark_rate: units::DARK_RATE_CPS,
            noise: NoiseModel::Poisson,
        }
    }
}

impl ScanSettings {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: &str| Err(SpectrumError::InvalidScan(m.to_string()));
        if self.window.points() < 2 {
            return bad("scan needs at least two points");
        }
        if let ScanWindow::Fixed { start, stop, .. } = self.window {
            if !(stop > start) {
                return bad("scan stop must exceed start");
            }
        }
        if let ScanWindow::Tracking { half_width, .. } = self.window {
            if !(half_width > 0.0) {
                return bad("tracking half width must be positive");
            }
        }
        if !(self.integration_time > 0.0 && self.integration_time.is_finite()) {
            return bad("integration time must be positive and finite");
        }
        if !(self.dark_rate >= 0.0) {
            return bad("dark rate must be non-negative");
        }
        Ok(())
    }
}

/// One PLE scan at fixed voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub voltage: f64,
    /// GHz relative to the scan reference, strictly increasing.
    pub detunings: Vec<f64>,
    /// Photon counts per bin.
    pub counts: Vec<f64>,
    pub integration_time: f64,
    pub noise_seed: u64,
}

impl Spectrum {
    pub fn new(
        voltage: f64,
        detunings: Vec<f64>,
        counts: Vec<f64>,
        integration_time: f64,
        noise_seed: u64,
    ) -> Result<Self, SpectrumError> {
        let s = Self {
            voltage,
            detunings,
            counts,
            integration_time,
            noise_seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: &str| Err(SpectrumError::InvalidSpectrum(m.to_string()));
        if self.detunings.len() != self.counts.len() {
            return bad("detunings and counts differ in length");
        }
        if !self.detunings.windows(2).all(|w| w[1] > w[0]) {
            return bad("detunings must be strictly increasing");
        }
        if !self.counts.iter().all(|&c| c >= 0.0 && c.is_finite()) {
            return bad("counts must be finite and non-negative");
        }
        if !(self.integration_time > 0.0) {
            return bad("integration time must be positive");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Counts divided by dwell time, counts/s.
    pub fn rates(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| c / self.integration_time)
            .collect()
    }
}

/// Centre (GHz), FWHM (MHz) and peak rate (counts/s) of the line at `v`.
pub fn line_parameters(
    em: &Emitter,
    label: TransitionLabel,
    probe: &FieldProbe,
    v: f64,
    model: &LineModel,
) -> Result<(f64, f64, f64), SpectrumError> {
    let p = em
        .params(label)
        .ok_or_else(|| SpectrumError::MissingTransition {
            id: em.id.clone(),
            label,
        })?;
    let e_local = probe.local_field(v);
    Ok((
        transition_frequency(p, e_local),
        linewidth_model(&model.shape, e_local, p.e0),
        amplitude_model(&model.amplitude, v),
    ))
}

pub fn generate_ple_scan(
    em: &Emitter,
    label: TransitionLabel,
    probe: &FieldProbe,
    v: f64,
    scan: &ScanSettings,
    model: &LineModel,
    seed: u64,
) -> Result<Spectrum, SpectrumError> {
    scan.validate()?;
    let (center, fwhm, amplitude) = line_parameters(em, label, probe, v, model)?;
    let detunings = scan.window.grid(center);
    let (lo, hi) = (detunings[0], *detunings.last().unwrap());
    let margin = 2.0 * units::mhz_to_ghz(fwhm);
    if center < lo - margin || center > hi + margin {
        return Err(SpectrumError::LineOutsideScan {
            voltage: v,
            center_ghz: center,
            lo,
            hi,
        });
    }

    let t = scan.integration_time;
    let expected = detunings
        .iter()
        .map(|&x| (lorentzian(x, center, fwhm, amplitude) + scan.dark_rate) * t);
    let counts: Vec<f64> = match scan.noise {
        NoiseModel::Noiseless => expected.collect(),
        NoiseModel::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            expected
                .map(|mean| {
                    if mean > 0.0 {
                        Poisson::new(mean)
                            .expect("positive finite mean")
                            .sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    Spectrum::new(v, detunings, counts, t, seed)
}

/// Seed of the `index`-th scan of a series.
pub fn series_seed(root: u64, index: usize) -> u64 {
    root ^ index as u64
}

/// One scan per voltage; failures are collected rather than short-circuited.
pub fn generate_voltage_series(
    em: &Emitter,
    label: TransitionLabel,
    probe: &FieldProbe,
    voltages: &[f64],
    scan: &ScanSettings,
    model: &LineModel,
    root_seed: u64,
) -> Result<Vec<Spectrum>, SpectrumError> {
    let mut out = Vec::with_capacity(voltages.len());
    let mut failures = Vec::new();
    for (i, &v) in voltages.iter().enumerate() {
        match generate_ple_scan(em, label, probe, v, scan, model, series_seed(root_seed, i)) {
            Ok(s) => out.push(s),
            Err(e) => failures.push((v, e)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(SpectrumError::Series(failures))
    }
}
