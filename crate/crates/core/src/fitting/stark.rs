//! Quadratic Stark fits on (local field, line centre) series.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use super::{FitError, LorentzianFit};
use crate::model::{self, StarkParams};
use crate::units::{self, ALPHA_EPSILON, FIELD_POSITION_REL_SIGMA};

/// Smallest usable field span, MV/m.
pub const MIN_FIELD_SPAN: f64 = 5.0;
const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkPoint {
    #[serde(rename = "e_local_MVpm")]
    pub field: f64,
    #[serde(rename = "e_local_sigma_MVpm")]
    pub field_sigma: f64,
    #[serde(rename = "center_GHz")]
    pub center: f64,
    #[serde(rename = "center_sigma_GHz")]
    pub center_sigma: f64,
}

impl StarkPoint {
    pub fn new(field: f64, center: f64, center_sigma: f64) -> Self {
        Self {
            field,
            field_sigma: 0.0,
            center,
            center_sigma,
        }
    }

    /// Local field from the fit's voltage through `kappa` (MV/m per V).
    pub fn from_fit(fit: &LorentzianFit, kappa: f64) -> Self {
        Self::new(kappa * fit.voltage, fit.center, fit.center_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkFitOptions {
    pub min_span: f64,
    /// Relative field-calibration uncertainty; enters α as twice this.
    pub field_rel_sigma: f64,
}

impl Default for StarkFitOptions {
    fn default() -> Self {
        Self {
            min_span: MIN_FIELD_SPAN,
            field_rel_sigma: FIELD_POSITION_REL_SIGMA,
        }
    }
}

/// Covariance and parameter order is (f_max, alpha, e0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkFit {
    #[serde(rename = "f_max_GHz")]
    pub f_max: f64,
    #[serde(rename = "f_max_sigma_GHz")]
    pub f_max_sigma: f64,
    #[serde(rename = "alpha_MHz_per_MVpm2")]
    pub alpha: f64,
    #[serde(rename = "alpha_sigma_MHz_per_MVpm2")]
    pub alpha_sigma: f64,
    /// From the field calibration, not included in `alpha_sigma`.
    #[serde(rename = "alpha_systematic_MHz_per_MVpm2")]
    pub alpha_systematic: f64,
    #[serde(rename = "e0_MVpm")]
    pub e0: f64,
    #[serde(rename = "e0_sigma_MVpm")]
    pub e0_sigma: f64,
    /// Row-major 3×3.
    pub covariance: Vec<f64>,
    pub n_points: usize,
    pub reduced_chi2: f64,
    /// `f = c0 + c1·E + c2·E²` in GHz and MV/m.
    #[serde(rename = "polynomial_GHz")]
    pub polynomial: [f64; 3],
}

impl StarkFit {
    pub fn params(&self) -> StarkParams {
        StarkParams {
            f_max: self.f_max,
            alpha: self.alpha,
            e0: self.e0,
        }
    }

    pub fn covariance_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.covariance)
    }
}

/// Weighted least squares in a centred frame.
struct PolyFit {
    coef: DVector<f64>,
    cov: DMatrix<f64>,
    chi2: f64,
}

fn check_points(points: &[StarkPoint], opts: &StarkFitOptions) -> Result<(), FitError> {
    if points.len() < MIN_POINTS {
        return Err(FitError::InsufficientPoints {
            got: points.len(),
            need: MIN_POINTS,
        });
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.field), b.max(p.field))
        });
    let span = hi - lo;
    if !(span >= opts.min_span) {
        return Err(FitError::InsufficientSpread {
            span,
            min: opts.min_span,
        });
    }
    Ok(())
}

/// Fits `y = Σ coef_k u^k` with weights `w` (None: unit weights and the
/// covariance scaled by the residual variance).
fn poly_fit(u: &[f64], y: &[f64], w: Option<&[f64]>, degree: usize) -> Result<PolyFit, FitError> {
    let n = u.len();
    let m = degree + 1;
    let sw: Vec<f64> = match w {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let a = DMatrix::from_fn(n, m, |i, k| sw[i] * u[i].powi(k as i32));
    let b = DVector::from_fn(n, |i, _| sw[i] * y[i]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-13 {
        return Err(FitError::IllConditioned);
    }
    let coef = svd.solve(&b, 0.0).map_err(|_| FitError::IllConditioned)?;
    let chi2 = (&a * &coef - &b).norm_squared();
    let vt = svd.v_t.as_ref().ok_or(FitError::IllConditioned)?;
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let mut cov = vt.transpose() * inv_s2 * vt;
    if w.is_none() {
        let dof = n.saturating_sub(m).max(1) as f64;
        cov *= chi2 / dof;
    }
    Ok(PolyFit { coef, cov, chi2 })
}

fn weights(points: &[StarkPoint], slope: Option<&dyn Fn(f64) -> f64>) -> Option<Vec<f64>> {
    if !points.iter().all(|p| p.center_sigma > 0.0) {
        return None;
    }
    Some(
        points
            .iter()
            .map(|p| {
                let df = slope.map_or(0.0, |s| s(p.field));
                1.0 / (p.center_sigma.powi(2) + (df * p.field_sigma).powi(2))
            })
            .collect(),
    )
}

pub fn fit_stark(points: &[StarkPoint]) -> Result<StarkFit, FitError> {
    fit_stark_with(points, &StarkFitOptions::default())
}

pub fn fit_stark_with(points: &[StarkPoint], opts: &StarkFitOptions) -> Result<StarkFit, FitError> {
    check_points(points, opts)?;
    let n = points.len() as f64;
    let e_mean = points.iter().map(|p| p.field).sum::<f64>() / n;
    let f_mean = points.iter().map(|p| p.center).sum::<f64>() / n;
    let u: Vec<f64> = points.iter().map(|p| p.field - e_mean).collect();
    let y: Vec<f64> = points.iter().map(|p| p.center - f_mean).collect();

    let mut w = weights(points, None);
    let mut fit = poly_fit(&u, &y, w.as_deref(), 2)?;
    if w.is_some() && points.iter().any(|p| p.field_sigma > 0.0) {
        // one effective-variance pass: field error projected through the slope
        let (b1, b2) = (fit.coef[1], fit.coef[2]);
        let slope = move |e: f64| b1 + 2.0 * b2 * (e - e_mean);
        w = weights(points, Some(&slope));
        fit = poly_fit(&u, &y, w.as_deref(), 2)?;
    }

    let (b0, b1, b2) = (fit.coef[0], fit.coef[1], fit.coef[2]);
    let c0 = f_mean + b0 - b1 * e_mean + b2 * e_mean * e_mean;
    let c1 = b1 - 2.0 * b2 * e_mean;
    if b2.abs() < units::mhz_to_ghz(ALPHA_EPSILON) {
        return Err(FitError::DegenerateQuadratic { c0, c1, c2: b2 });
    }

    let e0 = e_mean - b1 / (2.0 * b2);
    let f_max = f_mean + b0 - b1 * b1 / (4.0 * b2);
    let alpha = -units::ghz_to_mhz(b2);
    let jac = Matrix3::new(
        1.0,
        -b1 / (2.0 * b2),
        b1 * b1 / (4.0 * b2 * b2),
        0.0,
        0.0,
        -units::ghz_to_mhz(1.0),
        0.0,
        -1.0 / (2.0 * b2),
        b1 / (2.0 * b2 * b2),
    );
    let poly_cov = Matrix3::from_fn(|i, j| fit.cov[(i, j)]);
    let cov = jac * poly_cov * jac.transpose();
    let sd = |k: usize| cov[(k, k)].max(0.0).sqrt();

    Ok(StarkFit {
        f_max,
        f_max_sigma: sd(0),
        alpha,
        alpha_sigma: sd(1),
        alpha_systematic: alpha.abs() * model::propagate_field_uncertainty(opts.field_rel_sigma),
        e0,
        e0_sigma: sd(2),
        covariance: cov.transpose().as_slice().to_vec(),
        n_points: points.len(),
        reduced_chi2: fit.chi2 / (n - 3.0).max(1.0),
        polynomial: [c0, c1, b2],
    })
}

/// Linear coefficient about the fitted vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTermTest {
    #[serde(rename = "linear_MHz_per_MVpm")]
    pub linear: f64,
    #[serde(rename = "linear_sigma_MHz_per_MVpm")]
    pub linear_sigma: f64,
    pub significance: f64,
    #[serde(rename = "cubic_MHz_per_MVpm3")]
    pub cubic: f64,
    #[serde(rename = "cubic_sigma_MHz_per_MVpm3")]
    pub cubic_sigma: f64,
    pub vertex: StarkFit,
}

/// Refits `a0 + β·u + a2·u² + γ·u³` with `u = E − e0` from the quadratic fit
/// and reports `β / σ_β`.
///
/// A pure linear addition to a parabola is itself a parabola with a moved
/// vertex, so only departures from the quadratic shape can register here;
/// the cubic term supplies that freedom.
pub fn linear_term_test(points: &[StarkPoint]) -> Result<LinearTermTest, FitError> {
    let vertex = fit_stark(points)?;
    let n = points.len();
    if n < 5 {
        return Err(FitError::InsufficientPoints { got: n, need: 5 });
    }
    let u: Vec<f64> = points.iter().map(|p| p.field - vertex.e0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.center - vertex.f_max).collect();
    let curvature = units::mhz_to_ghz(vertex.alpha);
    let slope = move |e: f64| -2.0 * curvature * (e - vertex.e0);
    let w = if points.iter().any(|p| p.field_sigma > 0.0) {
        weights(points, Some(&slope))
    } else {
        weights(points, None)
    };
    let fit = poly_fit(&u, &y, w.as_deref(), 3)?;
    let linear = units::ghz_to_mhz(fit.coef[1]);
    let linear_sigma = units::ghz_to_mhz(fit.cov[(1, 1)].max(0.0).sqrt());
    Ok(LinearTermTest {
        linear,
        linear_sigma,
        significance: if linear_sigma > 0.0 {
            linear / linear_sigma
        } else {
            0.0
        },
        cubic: units::ghz_to_mhz(fit.coef[3]),
        cubic_sigma: units::ghz_to_mhz(fit.cov[(3, 3)].max(0.0).sqrt()),
        vertex,
    })
}
