//! Graded tensor-product axes.

/// Sorted node coordinates along one axis, µm.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub nodes: Vec<f64>,
}

/// Local target spacing: `fine` inside the refined window, growing linearly
/// with distance from it (geometric cell growth), capped at `coarse`.
#[derive(Debug, Clone, Copy)]
pub struct Grading {
    pub fine: f64,
    pub coarse: f64,
    pub growth: f64,
    pub window: (f64, f64),
}

impl Grading {
    fn spacing(&self, x: f64) -> f64 {
        let (lo, hi) = self.window;
        let dist = if x < lo {
            lo - x
        } else if x > hi {
            x - hi
        } else {
            0.0
        };
        (self.fine + self.growth * dist).min(self.coarse)
    }
}

const SUBSTEPS: usize = 2048;

impl Axis {
    /// Builds an axis through every point of `anchors` (which must include
    /// both ends), with spacing following `grading` between anchors.
    pub fn graded(anchors: &[f64], grading: &Grading) -> Self {
        let mut pts: Vec<f64> = anchors.to_vec();
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let mut nodes = vec![pts[0]];
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            // cumulative cell count ξ(x) = ∫ dx / s(x), trapezoid rule
            let dx = (b - a) / SUBSTEPS as f64;
            let mut xi = Vec::with_capacity(SUBSTEPS + 1);
            xi.push(0.0);
            let mut acc = 0.0;
            for k in 0..SUBSTEPS {
                let x0 = a + k as f64 * dx;
                let x1 = x0 + dx;
                acc += 0.5 * dx * (1.0 / grading.spacing(x0) + 1.0 / grading.spacing(x1));
                xi.push(acc);
            }
            let cells = (acc.round() as usize).max(1);
            let mut k = 0usize;
            for c in 1..cells {
                let target = acc * c as f64 / cells as f64;
                while xi[k + 1] < target {
                    k += 1;
                }
                let t = (target - xi[k]) / (xi[k + 1] - xi[k]);
                nodes.push(a + (k as f64 + t) * dx);
            }
            nodes.push(b);
        }
        Self { nodes }
    }

    pub fn uniform(lo: f64, hi: f64, cells: usize) -> Self {
        let h = (hi - lo) / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| lo + i as f64 * h).collect();
        nodes[cells] = hi;
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = self.nodes.partition_point(|&n| n < x);
        if i == 0 {
            0
        } else if i == self.nodes.len() {
            i - 1
        } else if (self.nodes[i] - x).abs() < (x - self.nodes[i - 1]).abs() {
            i
        } else {
            i - 1
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_nodes_and_window_is_uniform() {
        let g = Grading {
            fine: 0.025,
            coarse: 1.0,
            growth: 0.1,
            window: (-3.8, 3.8),
        };
        let ax = Axis::graded(&[-30.0, -13.8, -3.8, 3.8, 13.8, 30.0], &g);
        for a in [-30.0, -13.8, -3.8, 3.8, 13.8, 30.0] {
            assert!(
                ax.nodes.iter().any(|&n| (n - a).abs() < 1e-12),
                "missing {a}"
            );
        }
        let i0 = ax.nearest(-3.8);
        let i1 = ax.nearest(3.8);
        assert_eq!(i1 - i0, 304);
        for i in i0..i1 {
            assert!((ax.spacing(i) - 0.025).abs() < 1e-9);
        }
        assert!(ax.nodes.windows(2).all(|w| w[1] > w[0]));
        // graded cells never exceed the cap by more than rounding
        assert!(ax.nodes.windows(2).all(|w| w[1] - w[0] < 1.1));
    }
}
