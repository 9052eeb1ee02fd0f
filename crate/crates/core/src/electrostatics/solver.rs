//! Vertex-centred finite-volume discretisation of ∇·(ε∇φ) = 0 and a
//! preconditioned conjugate-gradient solve.
//!
//! Nodes are indexed `k = j * nx + i`. Each node owns the dual cell bounded
//! by the midpoints to its neighbours; an edge coefficient is the flux
//! conductance `(∫ ε over the dual face) / edge length`. Permittivity is
//! constant per primal cell, so an edge lying on a material interface gets
//! the area-weighted average of the two cells it separates. Edges that would
//! leave the domain are absent, which is the zero-normal-derivative outer
//! boundary.

use super::grid::Axis;

#[derive(Debug, Clone)]
pub(crate) struct Operator {
    pub nx: usize,
    pub ny: usize,
    /// conductance of edge (i,j)–(i+1,j), length (nx-1)*ny
    pub cx: Vec<f64>,
    /// conductance of edge (i,j)–(i,j+1), length nx*(ny-1)
    pub cy: Vec<f64>,
    /// `Some(v)` for Dirichlet nodes
    pub fixed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

impl Operator {
    /// `cell_eps(i, j)` is the permittivity of cell [x_i,x_{i+1}]×[y_j,y_{j+1}].
    pub fn assemble(
        x: &Axis,
        y: &Axis,
        cell_eps: impl Fn(usize, usize) -> f64,
        fixed: Vec<Option<f64>>,
    ) -> Self {
        let (nx, ny) = (x.len(), y.len());
        debug_assert_eq!(fixed.len(), nx * ny);
        let mut cx = vec![0.0; (nx - 1) * ny];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let mut face = 0.0;
                if j > 0 {
                    face += cell_eps(i, j - 1) * 0.5 * y.spacing(j - 1);
                }
                if j + 1 < ny {
                    face += cell_eps(i, j) * 0.5 * y.spacing(j);
                }
                cx[j * (nx - 1) + i] = face / x.spacing(i);
            }
        }
        let mut cy = vec![0.0; nx * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let mut face = 0.0;
                if i > 0 {
                    face += cell_eps(i - 1, j) * 0.5 * x.spacing(i - 1);
                }
                if i + 1 < nx {
                    face += cell_eps(i, j) * 0.5 * x.spacing(i);
                }
                cy[j * nx + i] = face / y.spacing(j);
            }
        }
        Self {
            nx,
            ny,
            cx,
            cy,
            fixed,
        }
    }

    #[inline]
    fn cx(&self, i: usize, j: usize) -> f64 {
        self.cx[j * (self.nx - 1) + i]
    }

    #[inline]
    fn cy(&self, i: usize, j: usize) -> f64 {
        self.cy[j * self.nx + i]
    }

    /// Neighbours of node (i,j) as (index, conductance).
    #[inline]
    fn neighbours(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let nx = self.nx;
        let k = j * nx + i;
        let w = (i > 0).then(|| (k - 1, self.cx(i - 1, j)));
        let e = (i + 1 < nx).then(|| (k + 1, self.cx(i, j)));
        let s = (j > 0).then(|| (k - nx, self.cy(i, j - 1)));
        let n = (j + 1 < self.ny).then(|| (k + nx, self.cy(i, j)));
        [w, e, s, n].into_iter().flatten()
    }

    fn diag(&self, i: usize, j: usize) -> f64 {
        self.neighbours(i, j).map(|(_, c)| c).sum()
    }

    /// Right-hand side from Dirichlet neighbours of free nodes.
    fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * self.nx + i;
                if self.fixed[k].is_some() {
                    continue;
                }
                b[k] = self
                    .neighbours(i, j)
                    .filter_map(|(n, c)| self.fixed[n].map(|v| c * v))
                    .sum();
            }
        }
        b
    }

    /// `A u` restricted to free nodes (Dirichlet entries of `u` ignored).
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * self.nx + i;
                if self.fixed[k].is_some() {
                    out[k] = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for (n, c) in self.neighbours(i, j) {
                    acc += c * u[k];
                    if self.fixed[n].is_none() {
                        acc -= c * u[n];
                    }
                }
                out[k] = acc;
            }
        }
    }

    /// Discrete Gauss-law residual `Σ c (φ_n − φ_k)` for every free node.
    pub fn residual(&self, phi: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; phi.len()];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * self.nx + i;
                if self.fixed[k].is_none() {
                    r[k] = self
                        .neighbours(i, j)
                        .map(|(n, c)| c * (phi[n] - phi[k]))
                        .sum();
                }
            }
        }
        r
    }

    /// Net conductance-weighted flux leaving the node set selected by
    /// `inside`, i.e. the enclosed (scaled) charge.
    pub fn outward_flux(&self, phi: &[f64], inside: impl Fn(usize, usize) -> bool) -> f64 {
        let mut total = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                if !inside(i, j) {
                    continue;
                }
                let k = j * self.nx + i;
                for (n, c) in self.neighbours(i, j) {
                    let (ni, nj) = (n % self.nx, n / self.nx);
                    if !inside(ni, nj) {
                        total += c * (phi[k] - phi[n]);
                    }
                }
            }
        }
        total
    }

    /// IC(0) pivots for the five-point structure in lexicographic order.
    fn ic0_pivots(&self) -> Vec<f64> {
        let nx = self.nx;
        let mut d = vec![0.0; nx * self.ny];
        for j in 0..self.ny {
            for i in 0..nx {
                let k = j * nx + i;
                if self.fixed[k].is_some() {
                    continue;
                }
                let mut p = self.diag(i, j);
                if i > 0 && self.fixed[k - 1].is_none() {
                    let c = self.cx(i - 1, j);
                    p -= c * c / d[k - 1];
                }
                if j > 0 && self.fixed[k - nx].is_none() {
                    let c = self.cy(i, j - 1);
                    p -= c * c / d[k - nx];
                }
                d[k] = p;
            }
        }
        d
    }

    fn precondition(&self, d: &[f64], r: &[f64], z: &mut [f64]) {
        let nx = self.nx;
        for j in 0..self.ny {
            for i in 0..nx {
                let k = j * nx + i;
                if self.fixed[k].is_some() {
                    z[k] = 0.0;
                    continue;
                }
                let mut acc = r[k];
                if i > 0 && self.fixed[k - 1].is_none() {
                    acc += self.cx(i - 1, j) * z[k - 1];
                }
                if j > 0 && self.fixed[k - nx].is_none() {
                    acc += self.cy(i, j - 1) * z[k - nx];
                }
                z[k] = acc / d[k];
            }
        }
        for j in (0..self.ny).rev() {
            for i in (0..nx).rev() {
                let k = j * nx + i;
                if self.fixed[k].is_some() {
                    continue;
                }
                let mut acc = 0.0;
                if i + 1 < nx && self.fixed[k + 1].is_none() {
                    acc += self.cx(i, j) * z[k + 1];
                }
                if j + 1 < self.ny && self.fixed[k + nx].is_none() {
                    acc += self.cy(i, j) * z[k + nx];
                }
                z[k] += acc / d[k];
            }
        }
    }

    /// Solves for the potential. On failure returns the stats reached.
    pub fn solve(
        &self,
        tolerance: f64,
        max_iter: usize,
    ) -> Result<(Vec<f64>, SolveStats), SolveStats> {
        let n = self.nx * self.ny;
        let b = self.rhs();
        let b_norm = norm(&b);
        // Dirichlet entries are carried in x; `apply` never reads them.
        let mut x: Vec<f64> = self.fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        if b_norm == 0.0 {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    relative_residual: 0.0,
                },
            ));
        }

        let d = self.ic0_pivots();
        let mut r = b;
        let mut z = vec![0.0; n];
        self.precondition(&d, &r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut rel = 1.0;
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let step = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += step * p[k];
                r[k] -= step * ap[k];
            }
            rel = norm(&r) / b_norm;
            if rel <= tolerance {
                // the recurrence drifts; confirm against the true residual
                r = self.residual(&x);
                rel = norm(&r) / b_norm;
                if rel <= tolerance {
                    return Ok((
                        x,
                        SolveStats {
                            iterations: it,
                            relative_residual: rel,
                        },
                    ));
                }
                self.precondition(&d, &r, &mut z);
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
                continue;
            }
            self.precondition(&d, &r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(SolveStats {
            iterations: max_iter,
            relative_residual: rel,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
