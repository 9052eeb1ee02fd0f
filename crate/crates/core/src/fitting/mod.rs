//! Line and Stark-parameter recovery.
//!
//! Each PLE scan is fitted with a Lorentzian on a constant background by
//! weighted Levenberg–Marquardt (Poisson weights, variance ≈ counts + 1).
//! The fitted centres versus local field are then fitted with a quadratic
//! in polynomial form, which is a linear problem, and mapped to the vertex
//! form `f_max − α (E − E0)²` with first-order covariance propagation.

mod lm;
mod peaks;
mod stark;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::Spectrum;
use crate::units;

pub use peaks::{detect_peaks_with, DEFAULT_FLOOR_K, MIN_SAMPLES};
pub use stark::{
    fit_stark, fit_stark_with, linear_term_test, LinearTermTest, StarkFit, StarkFitOptions,
    StarkPoint, MIN_FIELD_SPAN,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("spectrum has {got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("no peak above the noise floor")]
    NoPeakFound,
    #[error("initial guess {center} GHz lies outside the scan window")]
    GuessOutsideScan { center: f64 },
    #[error("fit did not converge (best centre {:.6} GHz)", .0.center)]
    NotConverged(Box<LorentzianFit>),
    #[error("normal equations are singular")]
    IllConditioned,
    #[error("need at least {need} points, got {got}")]
    InsufficientPoints { got: usize, need: usize },
    #[error("field span {span:.3} MV/m is below the minimum {min} MV/m")]
    InsufficientSpread { span: f64, min: f64 },
    #[error(
        "quadratic coefficient {c2:e} GHz/(MV/m)^2 too small; polynomial form c0={c0}, c1={c1}"
    )]
    DegenerateQuadratic { c0: f64, c1: f64, c2: f64 },
}

/// Starting point for a line fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakGuess {
    /// GHz
    pub center: f64,
    /// MHz
    pub fwhm: f64,
    /// counts/s above background
    pub amplitude: f64,
}

/// Recovered line parameters; rates in counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    #[serde(rename = "voltage_V")]
    pub voltage: f64,
    #[serde(rename = "center_GHz")]
    pub center: f64,
    #[serde(rename = "center_sigma_GHz")]
    pub center_sigma: f64,
    #[serde(rename = "fwhm_MHz")]
    pub fwhm: f64,
    #[serde(rename = "fwhm_sigma_MHz")]
    pub fwhm_sigma: f64,
    #[serde(rename = "amplitude_cps")]
    pub amplitude: f64,
    #[serde(rename = "amplitude_sigma_cps")]
    pub amplitude_sigma: f64,
    #[serde(rename = "baseline_cps")]
    pub baseline: f64,
    #[serde(rename = "baseline_sigma_cps")]
    pub baseline_sigma: f64,
    /// Reduced χ².
    #[serde(rename = "reduced_chi2")]
    pub goodness: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn detect_peaks(s: &Spectrum) -> Result<Vec<PeakGuess>, FitError> {
    detect_peaks_with(s, DEFAULT_FLOOR_K)
}

struct LorentzProblem<'a> {
    x: &'a [f64],
    y: Vec<f64>,
    inv_sigma: Vec<f64>,
}

impl LorentzProblem<'_> {
    /// θ = [centre GHz, FWHM GHz, amplitude, baseline]
    fn model(theta: &DVector<f64>, x: f64) -> (f64, [f64; 4]) {
        let (c, w, a, b) = (theta[0], theta[1], theta[2], theta[3]);
        let h = 0.5 * w;
        let u = (x - c) / h;
        let q = 1.0 / (1.0 + u * u);
        let m = b + a * q;
        let dc = a * 2.0 * u * q * q / h;
        let dw = a * 2.0 * u * u * q * q / w;
        (m, [dc, dw, q, 1.0])
    }
}

impl lm::Problem for LorentzProblem<'_> {
    fn evaluate(&self, theta: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if !(theta[1] > 0.0) || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n = self.x.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 4);
        for i in 0..n {
            let (m, d) = Self::model(theta, self.x[i]);
            let w = self.inv_sigma[i];
            r[i] = (self.y[i] - m) * w;
            for k in 0..4 {
                j[(i, k)] = -d[k] * w;
            }
        }
        Some((r, j))
    }
}

/// Weighted Lorentzian-plus-background fit started from `guess`.
pub fn fit_lorentzian(s: &Spectrum, guess: &PeakGuess) -> Result<LorentzianFit, FitError> {
    let n = s.len();
    if n < 5 {
        return Err(FitError::TooFewSamples { got: n, need: 5 });
    }
    let (lo, hi) = (s.detunings[0], s.detunings[n - 1]);
    if !(guess.center >= lo && guess.center <= hi) {
        return Err(FitError::GuessOutsideScan {
            center: guess.center,
        });
    }
    let t = s.integration_time;
    let problem = LorentzProblem {
        x: &s.detunings,
        y: s.rates(),
        inv_sigma: s.counts.iter().map(|c| t / (c + 1.0).sqrt()).collect(),
    };

    let mut sorted = problem.y.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let baseline0 = sorted[n / 5];
    let step = (hi - lo) / (n - 1) as f64;
    let start = DVector::from_vec(vec![
        guess.center,
        units::mhz_to_ghz(guess.fwhm).max(step),
        guess.amplitude,
        baseline0,
    ]);
    let out = lm::minimize(&problem, start).ok_or(FitError::IllConditioned)?;
    let cov = lm::covariance(&out.jacobian).ok_or(FitError::IllConditioned)?;
    let sd = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let dof = n.saturating_sub(4).max(1) as f64;
    let fit = LorentzianFit {
        voltage: s.voltage,
        center: out.theta[0],
        center_sigma: sd(0),
        fwhm: units::ghz_to_mhz(out.theta[1]),
        fwhm_sigma: units::ghz_to_mhz(sd(1)),
        amplitude: out.theta[2],
        amplitude_sigma: sd(2),
        baseline: out.theta[3],
        baseline_sigma: sd(3),
        goodness: out.chi2 / dof,
        converged: out.converged,
        iterations: out.iterations,
    };
    // a "line" outside the window or with non-positive height is a fit to
    // the background, not to a peak
    if !fit.converged || fit.amplitude <= 0.0 || fit.center < lo || fit.center > hi {
        return Err(FitError::NotConverged(Box::new(LorentzianFit {
            converged: false,
            ..fit
        })));
    }
    Ok(fit)
}

/// Detects the strongest line and fits it.
pub fn fit_strongest(s: &Spectrum) -> Result<LorentzianFit, FitError> {
    let guesses = detect_peaks(s)?;
    fit_lorentzian(s, &guesses[0])
}
