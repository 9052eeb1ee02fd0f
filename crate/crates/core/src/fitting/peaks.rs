//! Initial guesses for line fits.

use super::{FitError, PeakGuess};
use crate::spectra::Spectrum;
use crate::units;

pub const MIN_SAMPLES: usize = 16;
/// Floor is `median + k · MAD`, MAD scaled to a normal σ.
pub const DEFAULT_FLOOR_K: f64 = 5.0;
const MAD_TO_SIGMA: f64 = 1.4826;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median and normal-consistent MAD.
pub(crate) fn robust_level(v: &[f64]) -> (f64, f64) {
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    (m, MAD_TO_SIGMA * median(&dev))
}

/// Full width at `level`, walking outward from `peak` with linear
/// interpolation; one-sided widths are doubled at the scan edges.
fn width_at(x: &[f64], y: &[f64], peak: usize, level: f64) -> f64 {
    let crossing = |range: &mut dyn Iterator<Item = usize>, step_back: isize| {
        for i in range {
            if y[i] < level {
                let k = (i as isize + step_back) as usize;
                let t = (y[k] - level) / (y[k] - y[i]);
                return Some(x[k] + t * (x[i] - x[k]));
            }
        }
        None
    };
    let left = crossing(&mut (0..peak).rev(), 1);
    let right = crossing(&mut (peak + 1..x.len()), -1);
    match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[peak] - l),
        (None, Some(r)) => 2.0 * (r - x[peak]),
        (None, None) => x[x.len() - 1] - x[0],
    }
}

/// Local maxima above the noise floor, strongest first.
pub fn detect_peaks_with(s: &Spectrum, k: f64) -> Result<Vec<PeakGuess>, FitError> {
    let n = s.len();
    if n < MIN_SAMPLES {
        return Err(FitError::TooFewSamples {
            got: n,
            need: MIN_SAMPLES,
        });
    }
    let y = s.rates();
    let x = &s.detunings;
    let (base, sigma) = robust_level(&y);
    let floor = base + k * sigma;

    // light smoothing keeps single-bin shot noise from splitting a line
    let sm: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();

    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            sm[i] > floor && (i == 0 || sm[i] >= sm[i - 1]) && (i + 1 == n || sm[i] > sm[i + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| sm[b].total_cmp(&sm[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        let distinct = kept.iter().all(|&p| {
            let (lo, hi) = if p < c { (p, c) } else { (c, p) };
            let valley = sm[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
            let shallower = sm[c].min(sm[p]) - base;
            valley < base + 0.5 * shallower
        });
        if distinct {
            kept.push(c);
        }
    }
    if kept.is_empty() {
        return Err(FitError::NoPeakFound);
    }

    let step = (x[n - 1] - x[0]) / (n - 1) as f64;
    Ok(kept
        .into_iter()
        .map(|i| {
            let height = sm[i] - base;
            let fwhm_ghz = width_at(x, &sm, i, base + 0.5 * height).max(2.0 * step);
            PeakGuess {
                center: x[i],
                fwhm: units::ghz_to_mhz(fwhm_ghz),
                amplitude: y[i] - base,
            }
        })
        .collect())
}
