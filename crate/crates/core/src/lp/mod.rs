//! Linear programs induced by check-loss minimization.
//!
//! Two families are solved here:
//!
//! * regression fits, `min sum_k sum_i rho_{tau_k}(y_i - b_k - x_i' beta)` over
//!   `K` free intercepts and a shared slope vector, handled by a primal-dual
//!   (Frisch-Newton) interior point method on the bounded dual followed by a
//!   vertex polish that snaps the iterate to an exact basic solution;
//! * simplex-constrained weight fits, `min sum_r rho_{tau_r}(y_r - P_r' w)` over
//!   `w >= 0, sum w = 1`, handled by a bounded-variable revised simplex on the
//!   dual, which only carries an `M x M` basis.

mod dense;
mod interior;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{psi, rho, QuantileGrid};

pub use interior::solve_check_loss_lp;
pub use simplex::{solve_simplex_weight_lp, WeightLpSolution};

/// Tolerance policy shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpOptions {
    /// Relative duality gap at which the interior point method stops.
    pub gap_tolerance: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the boundary taken by each step.
    pub step_fraction: f64,
    /// Snap interior point iterates to an exact vertex when a certificate exists.
    pub polish: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-8,
            max_iterations: 200,
            step_fraction: 0.99995,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// Check-loss regression program: `K` row blocks sharing one `n x p` design,
/// block `k` weighted by level `tau_k`. Stacked row `k * n + i` reads
/// `y_i - b_k - x_i' beta`.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearProgram {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    taus: Vec<f64>,
}

impl PiecewiseLinearProgram {
    /// `x` is row-major `n x p`.
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize, grid: &QuantileGrid) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::domain("program needs at least one observation"));
        }
        if x.len() != n * p {
            return Err(Error::shape(format!(
                "design has {} entries, expected {n} x {p}",
                x.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::domain("program data contains non-finite values"));
        }
        Ok(Self {
            n,
            p,
            x,
            y,
            taus: grid.levels().to_vec(),
        })
    }

    pub fn observations(&self) -> usize {
        self.n
    }

    pub fn slopes(&self) -> usize {
        self.p
    }

    pub fn blocks(&self) -> usize {
        self.taus.len()
    }

    /// Intercepts plus slopes.
    pub fn num_params(&self) -> usize {
        self.taus.len() + self.p
    }

    pub fn rows(&self) -> usize {
        self.n * self.taus.len()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub(crate) fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Copies stacked row `r` of the design (`[e_k, x_i]`) into `out`.
    pub(crate) fn design_row(&self, r: usize, out: &mut [f64]) {
        let (k, i) = (r / self.n, r % self.n);
        let kk = self.taus.len();
        out[..kk].iter_mut().for_each(|v| *v = 0.0);
        out[k] = 1.0;
        out[kk..].copy_from_slice(self.x_row(i));
    }

    /// Stacked residuals `y_i - b_k - x_i' beta`.
    pub fn residuals(&self, params: &[f64]) -> Vec<f64> {
        let kk = self.taus.len();
        let beta = &params[kk..];
        let lin: Vec<f64> = (0..self.n)
            .map(|i| dot(self.x_row(i), beta))
            .collect();
        let mut out = Vec::with_capacity(self.rows());
        for &b in &params[..kk] {
            out.extend(self.y.iter().zip(&lin).map(|(&y, &l)| y - b - l));
        }
        out
    }

    pub fn objective(&self, params: &[f64]) -> f64 {
        self.residuals(params)
            .chunks(self.n)
            .zip(&self.taus)
            .map(|(block, &tau)| block.iter().map(|&r| rho(r, tau)).sum::<f64>())
            .sum()
    }

    /// Subgradient sums `sum_r g_r z_r` for every parameter column, where
    /// `g_r = psi_tau(r)` for rows with a clearly nonzero residual and the
    /// solver dual (clamped into `[tau - 1, tau]`) for interpolated rows.
    /// At an optimum every entry vanishes.
    pub fn subgradient_sums(&self, params: &[f64], duals: &[f64], zero_tol: f64) -> Vec<f64> {
        let kk = self.taus.len();
        let res = self.residuals(params);
        let mut sums = vec![0.0; self.num_params()];
        for (r, &e) in res.iter().enumerate() {
            let (k, i) = (r / self.n, r % self.n);
            let tau = self.taus[k];
            let g = if e.abs() <= zero_tol * (1.0 + self.y[i].abs()) {
                duals.get(r).copied().unwrap_or(0.0).clamp(tau - 1.0, tau)
            } else {
                psi(e, tau)
            };
            sums[k] += g;
            for (s, &xv) in sums[kk..].iter_mut().zip(self.x_row(i)) {
                *s += g * xv;
            }
        }
        sums
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a check-loss regression solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    /// `K` intercepts followed by `p` slopes.
    pub params: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: LpStatus,
    /// Complementarity gap `x'z + s'w` at termination (zero after a polish).
    pub gap: f64,
    /// Dual multipliers per stacked row, in `[tau - 1, tau]`.
    pub duals: Vec<f64>,
    /// True when the parameters interpolate `K + p` rows exactly.
    pub vertex: bool,
}
