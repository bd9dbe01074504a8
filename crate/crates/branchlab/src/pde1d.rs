//! Shared 1-D finite-difference machinery: uniform grids, tridiagonal
//! solves, and a Crank-Nicolson stepper for operators of the form
//! `L w = a/2 w'' + b w' + c w` with Dirichlet or reflecting ends.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform 1-D grid with nodes `0..=n_cells`; the two end nodes carry the
/// boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(left: f64, right: f64, n_cells: usize) -> Result<Self> {
        if !(right > left) || !left.is_finite() || !right.is_finite() {
            return Err(Error::Config(format!("bad interval [{left}, {right}]")));
        }
        if n_cells < 16 {
            return Err(Error::Config("grid needs at least 16 cells".into()));
        }
        Ok(Self { left, right, n_cells })
    }

    pub fn dx(&self) -> f64 {
        (self.right - self.left) / self.n_cells as f64
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.left + i as f64 * self.dx()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn interior_count(&self) -> usize {
        self.n_cells - 1
    }

    /// x-coordinates of the interior nodes.
    pub fn interior_xs(&self) -> Vec<f64> {
        (1..self.n_cells).map(|i| self.node_x(i)).collect()
    }

    /// Linear interpolation of nodal values at `x` (clamped to the grid).
    pub fn interp(&self, nodes: &[f64], x: f64) -> f64 {
        debug_assert_eq!(nodes.len(), self.n_nodes());
        let t = ((x - self.left) / self.dx()).clamp(0.0, self.n_cells as f64);
        let i = (t.floor() as usize).min(self.n_cells - 1);
        let frac = t - i as f64;
        nodes[i] * (1.0 - frac) + nodes[i + 1] * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Value pinned to zero at the boundary node.
    Dirichlet,
    /// Zero-gradient closure (mirror), used for the inner end of radial
    /// reductions.
    Reflect,
}

/// Tridiagonal representation of `L` restricted to the interior nodes.
#[derive(Debug, Clone)]
pub struct Operator1d {
    /// Coefficient of `w[i-1]` in row i.
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    /// Coefficient of `w[i+1]` in row i.
    pub sup: Vec<f64>,
}

impl Operator1d {
    /// Assemble `L w = a/2 w'' + b w' + c w` with centered differences from
    /// values sampled at the interior nodes.
    pub fn assemble(
        grid: &Grid1D,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        left: BoundaryKind,
        right: BoundaryKind,
    ) -> Self {
        let n = grid.interior_count();
        debug_assert!(a.len() == n && b.len() == n && c.len() == n);
        let dx = grid.dx();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            let alpha = 0.5 * a[i] / (dx * dx) - b[i] / (2.0 * dx);
            let beta = -a[i] / (dx * dx) + c[i];
            let gamma = 0.5 * a[i] / (dx * dx) + b[i] / (2.0 * dx);
            sub[i] = alpha;
            diag[i] = beta;
            sup[i] = gamma;
        }
        // Boundary closure: Dirichlet drops the out-of-range neighbour,
        // Reflect folds it onto the first interior node.
        match left {
            BoundaryKind::Dirichlet => sub[0] = 0.0,
            BoundaryKind::Reflect => {
                diag[0] += sub[0];
                sub[0] = 0.0;
            }
        }
        let last = n - 1;
        match right {
            BoundaryKind::Dirichlet => sup[last] = 0.0,
            BoundaryKind::Reflect => {
                diag[last] += sup[last];
                sup[last] = 0.0;
            }
        }
        Self { sub, diag, sup }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `out = L w` on the interior.
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut acc = self.diag[i] * w[i];
            if i > 0 {
                acc += self.sub[i] * w[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * w[i + 1];
            }
            out[i] = acc;
        }
    }

    /// Solve `(shift I - L) w = rhs` by the Thomas algorithm. The systems we
    /// assemble are strictly diagonally dominant, so no pivoting is needed.
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        // rows: -sub[i] w[i-1] + (shift - diag[i]) w[i] - sup[i] w[i+1] = rhs[i]
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut w = vec![0.0; n];
        let b0 = shift - self.diag[0];
        c[0] = -self.sup[0] / b0;
        d[0] = rhs[0] / b0;
        for i in 1..n {
            let m = (shift - self.diag[i]) + self.sub[i] * c[i - 1];
            c[i] = -self.sup[i] / m;
            d[i] = (rhs[i] + self.sub[i] * d[i - 1]) / m;
        }
        w[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            w[i] = d[i] - c[i] * w[i + 1];
        }
        w
    }
}

/// Crank-Nicolson stepper for `dw/dt = L w + source`: the linear part is
/// treated implicitly (trapezoidal), the source explicitly.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    pub op: Operator1d,
    pub dt: f64,
}

impl CrankNicolson {
    pub fn new(op: Operator1d, dt: f64) -> Self {
        Self { op, dt }
    }

    /// Advance `w` by one step; `source` is evaluated at the current state.
    pub fn step(&self, w: &mut Vec<f64>, source: Option<&[f64]>) {
        let n = self.op.len();
        let mut rhs = vec![0.0; n];
        self.op.apply(w, &mut rhs);
        for i in 0..n {
            rhs[i] = w[i] + 0.5 * self.dt * rhs[i];
            if let Some(s) = source {
                rhs[i] += self.dt * s[i];
            }
        }
        // (I - dt/2 L) w_next = rhs  <=>  (2/dt I - L) w_next = 2/dt rhs
        let scale = 2.0 / self.dt;
        for v in rhs.iter_mut() {
            *v *= scale;
        }
        *w = self.op.solve_shifted(scale, &rhs);
    }
}
