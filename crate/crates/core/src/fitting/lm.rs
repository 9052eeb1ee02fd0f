//! Damped Gauss–Newton (Levenberg–Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;

/// Weighted residuals `r` and their Jacobian `∂r/∂θ`, or `None` when `θ`
/// lies outside the model's domain.
pub trait Problem {
    fn evaluate(&self, theta: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub theta: DVector<f64>,
    pub chi2: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// MINPACK-style cosine between the residual and each Jacobian column.
fn gradient_cosine(r: &DVector<f64>, j: &DMatrix<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|k| {
            let cn = j.column(k).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[k].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Returns `None` when the starting point itself is outside the domain.
pub fn minimize(problem: &impl Problem, start: DVector<f64>) -> Option<Outcome> {
    let (mut r, mut j) = problem.evaluate(&start)?;
    let mut theta = start;
    let mut chi2 = r.norm_squared();
    let mut lambda = LAMBDA_START;
    let n = theta.len();

    for it in 1..=MAX_ITERATIONS {
        if gradient_cosine(&r, &j) < GRADIENT_TOLERANCE {
            return Some(Outcome {
                theta,
                chi2,
                jacobian: j,
                iterations: it - 1,
                converged: true,
            });
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&g)));
            let accepted = step.and_then(|delta| {
                let trial = &theta + &delta;
                problem.evaluate(&trial).and_then(|(rt, jt)| {
                    let c = rt.norm_squared();
                    (c < chi2).then_some((trial, delta, rt, jt, c))
                })
            });
            match accepted {
                Some((trial, delta, rt, jt, c)) => {
                    let rel_step = delta
                        .iter()
                        .zip(trial.iter())
                        .map(|(d, t)| d.abs() / (t.abs() + 1e-12))
                        .fold(0.0, f64::max);
                    theta = trial;
                    r = rt;
                    j = jt;
                    chi2 = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel_step < STEP_TOLERANCE {
                        return Some(Outcome {
                            theta,
                            chi2,
                            jacobian: j,
                            iterations: it,
                            converged: true,
                        });
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        // no downhill step of any size: stationary to
                        // working precision
                        return Some(Outcome {
                            theta,
                            chi2,
                            jacobian: j,
                            iterations: it,
                            converged: true,
                        });
                    }
                }
            }
        }
    }
    Some(Outcome {
        theta,
        chi2,
        jacobian: j,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}

/// `(JᵀJ)⁻¹`, or `None` if singular.
pub fn covariance(j: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let jtj = j.transpose() * j;
    let inv = jtj.cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}
