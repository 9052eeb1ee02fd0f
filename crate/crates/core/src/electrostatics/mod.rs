//! Static field of surface electrodes on diamond.
//!
//! The device is modelled as a 2-D cross-section perpendicular to the
//! electrode fingers: `x` runs along the surface (origin at the gap centre),
//! `y` points from the diamond surface (`y = 0`) up into vacuum. Electrodes
//! are zero-thickness equipotential strips on the surface. Potentials are in
//! V and lengths in µm, so gradients come out directly in MV/m.

mod grid;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::Axis;
use grid::Grading;
use solver::Operator;

use crate::model::Position;
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("resolution {0} cells per gap is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooLow(usize),
    #[error("probe at ({x_um} um, {y_um} um) lies outside the solved domain")]
    OutOfDomain { x_um: f64, y_um: f64 },
}

pub const MIN_RESOLUTION: usize = 64;
/// 25 nm cells across the reference 7.6 µm gap.
pub const DEFAULT_RESOLUTION: usize = 304;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Two coplanar strips on the diamond surface.
    Coplanar,
    /// Two full-height plates bounding a uniform dielectric (solver check).
    ParallelPlate,
}

/// Which electrode carries the applied voltage; the other is grounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Simulation box, µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub width_um: f64,
    pub height_um: f64,
    pub depth_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeGeometry {
    pub layout: Layout,
    /// Separation of the inner electrode edges, µm.
    pub gap_um: f64,
    pub electrode_width_um: f64,
    pub applied_voltage: f64,
    pub epsilon_diamond: f64,
    pub domain: Domain,
    pub biased: Side,
}

impl ElectrodeGeometry {
    /// Coplanar strips with a box extending three gaps beyond the electrodes.
    pub fn coplanar(
        gap_um: f64,
        electrode_width_um: f64,
        applied_voltage: f64,
        epsilon: f64,
    ) -> Self {
        let margin = 3.0 * gap_um;
        Self {
            layout: Layout::Coplanar,
            gap_um,
            electrode_width_um,
            applied_voltage,
            epsilon_diamond: epsilon,
            domain: Domain {
                width_um: gap_um + 2.0 * electrode_width_um + 2.0 * margin,
                height_um: margin,
                depth_um: margin,
            },
            biased: Side::Right,
        }
    }

    /// The reference device: 7.6 µm gap, 10 µm fingers, 10 V, ε = 5.7.
    pub fn reference() -> Self {
        Self::coplanar(
            units::REFERENCE_GAP_UM,
            units::REFERENCE_ELECTRODE_WIDTH_UM,
            10.0,
            units::EPSILON_DIAMOND,
        )
    }

    /// Plates at `x = ±separation/2` spanning the full box height.
    pub fn parallel_plate(separation_um: f64, applied_voltage: f64, epsilon: f64) -> Self {
        Self {
            layout: Layout::ParallelPlate,
            gap_um: separation_um,
            electrode_width_um: 0.0,
            applied_voltage,
            epsilon_diamond: epsilon,
            domain: Domain {
                width_um: separation_um,
                height_um: 0.5 * separation_um,
                depth_um: 0.5 * separation_um,
            },
            biased: Side::Right,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::InvalidGeometry(m));
        if !(self.gap_um > 0.0) {
            return bad(format!("gap must be positive, got {}", self.gap_um));
        }
        if !(self.epsilon_diamond >= 1.0) {
            return bad(format!(
                "epsilon must be >= 1, got {}",
                self.epsilon_diamond
            ));
        }
        if !self.applied_voltage.is_finite() {
            return bad("applied voltage must be finite".into());
        }
        let d = &self.domain;
        if !(d.height_um > 0.0 && d.depth_um > 0.0) {
            return bad("domain height and depth must be positive".into());
        }
        match self.layout {
            Layout::Coplanar => {
                if !(self.electrode_width_um > 0.0) {
                    return bad("electrode width must be positive".into());
                }
                let half_span = 0.5 * self.gap_um + self.electrode_width_um;
                let margin = 2.0 * self.gap_um;
                if 0.5 * d.width_um < half_span + margin - 1e-9
                    || d.height_um < margin - 1e-9
                    || d.depth_um < margin - 1e-9
                {
                    return bad(format!(
                        "domain must extend at least {margin} um beyond the electrodes"
                    ));
                }
            }
            Layout::ParallelPlate => {
                if (d.width_um - self.gap_um).abs() > 1e-9 {
                    return bad("parallel-plate domain width must equal the separation".into());
                }
            }
        }
        Ok(())
    }

    /// Device-frame x of a point `x_um` from the grounded electrode's inner edge.
    pub fn probe_x(&self, x_um: f64) -> f64 {
        match self.biased {
            Side::Right => -0.5 * self.gap_um + x_um,
            Side::Left => 0.5 * self.gap_um - x_um,
        }
    }

    /// Permittivity of the medium at device-frame height `y`.
    pub fn epsilon_at(&self, y_um: f64) -> f64 {
        match self.layout {
            Layout::Coplanar if y_um > 0.0 => 1.0,
            _ => self.epsilon_diamond,
        }
    }
}

/// Convergence of one potential solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solved potential on grid nodes and field on cell centres.
#[derive(Debug, Clone)]
pub struct FieldMap {
    pub geometry: ElectrodeGeometry,
    pub resolution: usize,
    pub x: Axis,
    pub y: Axis,
    /// Node potentials, V, indexed `j * nx + i`.
    pub phi: Vec<f64>,
    /// Cell-centre field, MV/m, indexed `j * (nx - 1) + i`.
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    pub convergence: Convergence,
    operator: Operator,
}

/// Local position inside the gap.
pub type ProbePosition = Position;

/// A probe position together with its voltage-to-local-field conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldProbe {
    pub x_um: f64,
    pub depth_nm: f64,
    /// Local field per applied volt, MV/m per V.
    #[serde(rename = "kappa_MVpm_per_V")]
    pub kappa: f64,
}

impl FieldProbe {
    pub fn new(x_um: f64, depth_nm: f64, kappa: f64) -> Self {
        debug_assert!(kappa > 0.0);
        Self {
            x_um,
            depth_nm,
            kappa,
        }
    }

    pub fn position(&self) -> ProbePosition {
        Position {
            x_um: self.x_um,
            depth_nm: self.depth_nm,
        }
    }

    /// Local field at applied voltage `v`, MV/m.
    pub fn local_field(&self, v: f64) -> f64 {
        self.kappa * v
    }
}

/// Field components and derived quantities at a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub x_um: f64,
    pub depth_nm: f64,
    #[serde(rename = "applied_voltage_V")]
    pub applied_voltage: f64,
    #[serde(rename = "Ex_MVpm")]
    pub ex: f64,
    #[serde(rename = "Ey_MVpm")]
    pub ey: f64,
    /// |E_ext|, MV/m.
    #[serde(rename = "E_ext_MVpm")]
    pub e_ext: f64,
    pub epsilon: f64,
    /// Lorentz-corrected local field, MV/m.
    #[serde(rename = "E_local_MVpm")]
    pub e_local: f64,
    #[serde(rename = "kappa_MVpm_per_V")]
    pub kappa: f64,
}

fn build_grid(g: &ElectrodeGeometry, resolution: usize) -> (Axis, Axis) {
    let gap = g.gap_um;
    let h0 = gap / resolution as f64;
    let half_w = 0.5 * g.domain.width_um;
    match g.layout {
        Layout::Coplanar => {
            let edge = 0.5 * gap + g.electrode_width_um;
            let pad = gap / 8.0;
            let gx = Grading {
                fine: h0,
                coarse: gap / 8.0,
                growth: 0.1,
                window: (-0.5 * gap - pad, 0.5 * gap + pad),
            };
            let x = Axis::graded(&[-half_w, -edge, -0.5 * gap, 0.5 * gap, edge, half_w], &gx);
            let gy = Grading {
                fine: h0,
                coarse: gap / 8.0,
                growth: 0.1,
                window: (-gap / 16.0, gap / 16.0),
            };
            let y = Axis::graded(&[-g.domain.depth_um, 0.0, g.domain.height_um], &gy);
            (x, y)
        }
        Layout::ParallelPlate => {
            let x = Axis::uniform(-half_w, half_w, resolution);
            let ny = ((g.domain.height_um + g.domain.depth_um) / h0)
                .round()
                .max(1.0) as usize;
            let y = Axis::uniform(-g.domain.depth_um, g.domain.height_um, ny);
            (x, y)
        }
    }
}

/// Solves ∇·(ε∇φ) = 0 for the geometry with `resolution` cells across the gap.
pub fn solve_potential(g: &ElectrodeGeometry, resolution: usize) -> Result<FieldMap, FieldError> {
    g.validate()?;
    if resolution < MIN_RESOLUTION {
        return Err(FieldError::ResolutionTooLow(resolution));
    }
    let (x, y) = build_grid(g, resolution);
    let (nx, ny) = (x.len(), y.len());
    let (v_left, v_right) = match g.biased {
        Side::Right => (0.0, g.applied_voltage),
        Side::Left => (g.applied_voltage, 0.0),
    };

    let mut fixed = vec![None; nx * ny];
    match g.layout {
        Layout::Coplanar => {
            let js = y.nearest(0.0);
            let inner = 0.5 * g.gap_um;
            let outer = inner + g.electrode_width_um;
            let tol = 1e-9;
            for (i, &xi) in x.nodes.iter().enumerate() {
                let a = xi.abs();
                if a >= inner - tol && a <= outer + tol {
                    fixed[js * nx + i] = Some(if xi < 0.0 { v_left } else { v_right });
                }
            }
        }
        Layout::ParallelPlate => {
            for j in 0..ny {
                fixed[j * nx] = Some(v_left);
                fixed[j * nx + nx - 1] = Some(v_right);
            }
        }
    }

    let yc = y.centers();
    let operator = Operator::assemble(&x, &y, |_, j| g.epsilon_at(yc[j]), fixed);
    let (phi, stats) = operator
        .solve(RESIDUAL_TOLERANCE, MAX_ITERATIONS)
        .map_err(|s| FieldError::NoConvergence {
            iterations: s.iterations,
            residual: s.relative_residual,
        })?;

    let mut ex = Vec::with_capacity((nx - 1) * (ny - 1));
    let mut ey = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let p00 = phi[j * nx + i];
            let p10 = phi[j * nx + i + 1];
            let p01 = phi[(j + 1) * nx + i];
            let p11 = phi[(j + 1) * nx + i + 1];
            ex.push(-0.5 * ((p10 - p00) + (p11 - p01)) / x.spacing(i));
            ey.push(-0.5 * ((p01 - p00) + (p11 - p10)) / y.spacing(j));
        }
    }

    Ok(FieldMap {
        geometry: g.clone(),
        resolution,
        x,
        y,
        phi,
        ex,
        ey,
        convergence: Convergence {
            iterations: stats.iterations,
            relative_residual: stats.relative_residual,
        },
        operator,
    })
}

/// Bracketing index and weight for linear interpolation on `c`.
fn bracket(c: &[f64], v: f64) -> (usize, f64) {
    if c.len() == 1 || v <= c[0] {
        return (0, 0.0);
    }
    let last = c.len() - 1;
    if v >= c[last] {
        return (last - 1, 1.0);
    }
    let i = c.partition_point(|&x| x <= v) - 1;
    (i, (v - c[i]) / (c[i + 1] - c[i]))
}

impl FieldMap {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn ny(&self) -> usize {
        self.y.len()
    }

    /// Field (Ex, Ey) at a device-frame point, bilinear in cell centres.
    pub fn field_at_point(&self, x_um: f64, y_um: f64) -> Result<(f64, f64), FieldError> {
        let (x0, x1) = (self.x.nodes[0], *self.x.nodes.last().unwrap());
        let (y0, y1) = (self.y.nodes[0], *self.y.nodes.last().unwrap());
        if !(x_um >= x0 && x_um <= x1 && y_um >= y0 && y_um <= y1) {
            return Err(FieldError::OutOfDomain { x_um, y_um });
        }
        let cx = self.x.centers();
        let cy = self.y.centers();
        let (i, tx) = bracket(&cx, x_um);
        let (j, ty) = bracket(&cy, y_um);
        let ncx = cx.len();
        let i1 = (i + 1).min(ncx - 1);
        let j1 = (j + 1).min(cy.len() - 1);
        let lerp = |f: &[f64]| {
            let a = f[j * ncx + i] * (1.0 - tx) + f[j * ncx + i1] * tx;
            let b = f[j1 * ncx + i] * (1.0 - tx) + f[j1 * ncx + i1] * tx;
            a * (1.0 - ty) + b * ty
        };
        Ok((lerp(&self.ex), lerp(&self.ey)))
    }

    /// Potential at the node nearest to a device-frame point.
    pub fn potential_near(&self, x_um: f64, y_um: f64) -> f64 {
        let i = self.x.nearest(x_um);
        let j = self.y.nearest(y_um);
        self.phi[j * self.nx() + i]
    }

    /// Outward flux (∝ enclosed charge) of the node set inside the box,
    /// in units of ε0·V.
    pub fn enclosed_flux(&self, x_range: (f64, f64), y_range: (f64, f64)) -> f64 {
        let (xs, ys) = (&self.x.nodes, &self.y.nodes);
        self.operator.outward_flux(&self.phi, |i, j| {
            xs[i] >= x_range.0 && xs[i] <= x_range.1 && ys[j] >= y_range.0 && ys[j] <= y_range.1
        })
    }

    /// Max relative residual of the discrete Gauss law on free nodes.
    pub fn residual_norm(&self) -> f64 {
        self.operator
            .residual(&self.phi)
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt()
    }

    /// Line cut at `depth_nm` below the surface: (x from grounded edge µm, Ex, Ey, |E|).
    pub fn line_cut(&self, depth_nm: f64, points: usize) -> Result<Vec<[f64; 4]>, FieldError> {
        let y = -units::nm_to_um(depth_nm);
        let n = points.max(2);
        (0..n)
            .map(|k| {
                let s = self.geometry.gap_um * k as f64 / (n - 1) as f64;
                let (ex, ey) = self.field_at_point(self.geometry.probe_x(s), y)?;
                Ok([s, ex, ey, ex.hypot(ey)])
            })
            .collect()
    }
}

/// Field (Ex, Ey) in MV/m at a position measured from the grounded electrode.
pub fn field_at(map: &FieldMap, pos: &ProbePosition) -> Result<(f64, f64), FieldError> {
    map.field_at_point(
        map.geometry.probe_x(pos.x_um),
        -units::nm_to_um(pos.depth_nm),
    )
}

/// Lorentz local field `E_ext (ε + 2) / 3`.
pub fn lorentz_local_field(e_ext: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon >= 1.0);
    e_ext * (epsilon + 2.0) / 3.0
}

/// Field summary at a probe of an already-solved map.
pub fn probe_report(map: &FieldMap, pos: &ProbePosition) -> Result<ProbeReport, FieldError> {
    let g = &map.geometry;
    let (ex, ey) = field_at(map, pos)?;
    let e_ext = ex.hypot(ey);
    let eps = g.epsilon_at(-units::nm_to_um(pos.depth_nm));
    let e_local = lorentz_local_field(e_ext, eps);
    let kappa = if g.applied_voltage != 0.0 {
        e_local / g.applied_voltage.abs()
    } else {
        f64::NAN
    };
    Ok(ProbeReport {
        x_um: pos.x_um,
        depth_nm: pos.depth_nm,
        applied_voltage: g.applied_voltage,
        ex,
        ey,
        e_ext,
        epsilon: eps,
        e_local,
        kappa,
    })
}

/// Local field per applied volt at `pos`. By linearity the result does not
/// depend on the reference voltage; 1 V is used when the geometry has none.
pub fn calibrate_kappa(
    g: &ElectrodeGeometry,
    pos: &ProbePosition,
    resolution: usize,
) -> Result<FieldProbe, FieldError> {
    let mut g = g.clone();
    if g.applied_voltage == 0.0 {
        g.applied_voltage = 1.0;
    }
    let map = solve_potential(&g, resolution)?;
    let r = probe_report(&map, pos)?;
    Ok(FieldProbe::new(pos.x_um, pos.depth_nm, r.kappa))
}
