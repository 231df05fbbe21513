//! Bounded-variable revised simplex for simplex-constrained check-loss fits.
//!
//! The weight problem
//!
//! ```text
//! min  sum_r rho_{tau_r}(y_r - P_r' w)   s.t.  w >= 0,  1'w = 1
//! ```
//!
//! has the dual
//!
//! ```text
//! max  y'd + lambda   s.t.  P'd + lambda 1 <= 0,  tau_r - 1 <= d_r <= tau_r,
//! ```
//!
//! with one constraint per model. Solving the dual keeps the basis at `M x M`
//! no matter how many rows the criterion has; the optimal weights are the
//! negated simplex multipliers.

use serde::{Deserialize, Serialize};

use super::dense::{Lu, Square};
use super::LpStatus;
use crate::error::{Error, Result};
use crate::loss::{rho, QuantileGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightLpSolution {
    pub weights: Vec<f64>,
    /// Mean check loss `(1/N) sum_r rho(y_r - P_r' w)`.
    pub objective: f64,
    pub iterations: usize,
    pub status: LpStatus,
    /// Primal minus dual objective (both scaled by `1/N`).
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Lower,
    Upper,
    Basic,
}

struct DualSimplex<'a> {
    pred: &'a [f64],
    y: &'a [f64],
    taus: Vec<f64>,
    rows: usize,
    m: usize,
    state: Vec<VarState>,
    value: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
}

impl<'a> DualSimplex<'a> {
    fn lambda(&self) -> usize {
        self.rows
    }

    fn slack(&self, m: usize) -> usize {
        self.rows + 1 + m
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        if j < self.rows {
            (self.taus[j] - 1.0, self.taus[j])
        } else if j == self.rows {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (0.0, f64::INFINITY)
        }
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.rows {
            -self.y[j]
        } else if j == self.rows {
            -1.0
        } else {
            0.0
        }
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        if j < self.rows {
            out.copy_from_slice(&self.pred[j * self.m..(j + 1) * self.m]);
        } else if j == self.rows {
            out.iter_mut().for_each(|v| *v = 1.0);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j - self.rows - 1] = 1.0;
        }
    }

    /// Rebuilds the basis inverse and the basic values from the nonbasic ones.
    fn reinvert(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = Square::zeros(m);
        let mut col = vec![0.0; m];
        for (pos, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for (i, &v) in col.iter().enumerate() {
                b.set(i, pos, v);
            }
        }
        let lu = Lu::factor(&b).ok_or_else(|| Error::Solver {
            message: "weight LP basis became singular".into(),
            iterations: 0,
        })?;
        let mut e = vec![0.0; m];
        for c in 0..m {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let colinv = lu.solve(&e);
            for r in 0..m {
                self.binv[r * m + c] = colinv[r];
            }
        }
        let mut rhs = vec![0.0; m];
        for j in 0..self.value.len() {
            if self.state[j] != VarState::Basic && self.value[j] != 0.0 {
                self.column(j, &mut col);
                for (r, c) in rhs.iter_mut().zip(&col) {
                    *r -= c * self.value[j];
                }
            }
        }
        for pos in 0..m {
            let v: f64 = (0..m).map(|c| self.binv[pos * m + c] * rhs[c]).sum();
            let j = self.basis[pos];
            self.value[j] = v;
        }
        Ok(())
    }

    fn multipliers(&self) -> Vec<f64> {
        let m = self.m;
        let mut pi = vec![0.0; m];
        for (pos, &j) in self.basis.iter().enumerate() {
            let cb = self.cost(j);
            if cb != 0.0 {
                for (c, p) in pi.iter_mut().enumerate() {
                    *p += cb * self.binv[pos * m + c];
                }
            }
        }
        pi
    }
}

fn mean_loss(pred: &[f64], y: &[f64], taus: &[f64], m: usize, w: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &yr)| {
            let fit: f64 = pred[r * m..(r + 1) * m].iter().zip(w).map(|(p, w)| p * w).sum();
            rho(yr - fit, taus[r])
        })
        .sum();
    total / y.len() as f64
}

/// Minimizes the mean composite check loss of a convex combination of
/// prediction columns.
///
/// `predictions` is row-major `N x M` with rows stacked block-by-block over
/// the grid (`N = n K`, row `k * n + i`); `responses` has the matching layout.
/// When several vertices of the simplex are optimal the lowest-index one is
/// returned.
pub fn solve_simplex_weight_lp(
    predictions: &[f64],
    responses: &[f64],
    models: usize,
    grid: &QuantileGrid,
) -> Result<WeightLpSolution> {
    let m = models;
    if m == 0 {
        return Err(Error::domain("weight LP needs at least one candidate model"));
    }
    let rows = responses.len();
    let kk = grid.len();
    if rows == 0 || !rows.is_multiple_of(kk) {
        return Err(Error::shape(format!(
            "{rows} responses cannot be split into {kk} quantile blocks"
        )));
    }
    if predictions.len() != rows * m {
        return Err(Error::shape(format!(
            "prediction matrix has {} entries, expected {rows} x {m}",
            predictions.len()
        )));
    }
    if predictions.iter().chain(responses).any(|v| !v.is_finite()) {
        return Err(Error::domain("weight LP input contains non-finite values"));
    }
    let n = rows / kk;
    let taus: Vec<f64> = (0..rows).map(|r| grid.tau(r / n)).collect();

    let vertex_losses: Vec<f64> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            mean_loss(predictions, responses, &taus, m, &e)
        })
        .collect();
    let best_vertex = (0..m)
        .min_by(|&a, &b| vertex_losses[a].total_cmp(&vertex_losses[b]))
        .unwrap();
    if m == 1 {
        return Ok(WeightLpSolution {
            weights: vec![1.0],
            objective: vertex_losses[0],
            iterations: 0,
            status: LpStatus::Optimal,
            gap: 0.0,
        });
    }

    let nvar = rows + 1 + m;
    let mut lp = DualSimplex {
        pred: predictions,
        y: responses,
        taus,
        rows,
        m,
        state: vec![VarState::Lower; nvar],
        value: vec![0.0; nvar],
        basis: vec![0; m],
        binv: vec![0.0; m * m],
    };

    // Start the row duals at the bounds matching the residual signs of the
    // best single model, then complete the basis with lambda and slacks.
    let mut g = vec![0.0; m];
    for r in 0..rows {
        let resid = responses[r] - predictions[r * m + best_vertex];
        let (lo, hi) = lp.bounds(r);
        let (st, v) = if resid > 0.0 {
            (VarState::Upper, hi)
        } else {
            (VarState::Lower, lo)
        };
        lp.state[r] = st;
        lp.value[r] = v;
        for (gm, p) in g.iter_mut().zip(&predictions[r * m..(r + 1) * m]) {
            *gm += p * v;
        }
    }
    let top = (0..m).fold(0, |best, j| if g[j] > g[best] { j } else { best });
    for pos in 0..m {
        let j = if pos == top { lp.lambda() } else { lp.slack(pos) };
        lp.basis[pos] = j;
        lp.state[j] = VarState::Basic;
    }
    lp.reinvert()?;

    let scale = responses
        .iter()
        .chain(predictions)
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-11 * scale;
    let max_iterations = 50 * (rows + m) + 1000;
    let mut iterations = 0;
    let mut degenerate_run = 0usize;
    let mut col = vec![0.0; m];
    let mut alpha = vec![0.0; m];
    let mut status = LpStatus::MaxIterations;

    while iterations < max_iterations {
        if iterations > 0 && iterations % 100 == 0 {
            lp.reinvert()?;
        }
        let pi = lp.multipliers();
        let bland = degenerate_run > 20;

        // pricing
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..nvar {
            let st = lp.state[j];
            if st == VarState::Basic || j == lp.lambda() {
                continue;
            }
            let dj = if j < rows {
                lp.cost(j) - predictions[j * m..(j + 1) * m]
                    .iter()
                    .zip(&pi)
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
            } else {
                -pi[j - rows - 1]
            };
            let improving = match st {
                VarState::Lower => dj < -tol,
                VarState::Upper => dj > tol,
                VarState::Basic => false,
            };
            if !improving {
                continue;
            }
            match entering {
                None => entering = Some((j, dj)),
                Some((_, best)) if !bland && dj.abs() > best.abs() => entering = Some((j, dj)),
                _ => {}
            }
            if bland {
                break;
            }
        }
        let Some((enter, _)) = entering else {
            status = LpStatus::Optimal;
            break;
        };
        iterations += 1;

        lp.column(enter, &mut col);
        for (pos, a) in alpha.iter_mut().enumerate() {
            *a = (0..m).map(|c| lp.binv[pos * m + c] * col[c]).sum();
        }
        let sigma = if lp.state[enter] == VarState::Lower {
            1.0
        } else {
            -1.0
        };
        let (el, eu) = lp.bounds(enter);
        let mut step = eu - el;
        let mut leave: Option<(usize, VarState)> = None;
        let mut leave_alpha = 0.0f64;
        for pos in 0..m {
            let delta = -sigma * alpha[pos];
            if delta.abs() <= 1e-12 {
                continue;
            }
            let j = lp.basis[pos];
            let (lo, hi) = lp.bounds(j);
            let (t, to) = if delta < 0.0 {
                if lo.is_finite() {
                    ((lp.value[j] - lo) / -delta, VarState::Lower)
                } else {
                    continue;
                }
            } else if hi.is_finite() {
                ((hi - lp.value[j]) / delta, VarState::Upper)
            } else {
                continue;
            };
            let t = t.max(0.0);
            let replace = if t < step - 1e-12 {
                true
            } else if t <= step + 1e-12 {
                match leave {
                    None => false,
                    Some((lpos, _)) if bland => j < lp.basis[lpos],
                    Some(_) => alpha[pos].abs() > leave_alpha,
                }
            } else {
                false
            };
            if replace {
                step = t;
                leave = Some((pos, to));
                leave_alpha = alpha[pos].abs();
            }
        }
        if !step.is_finite() {
            return Err(Error::Solver {
                message: "weight LP dual unbounded (primal infeasible)".into(),
                iterations,
            });
        }
        degenerate_run = if step < 1e-12 { degenerate_run + 1 } else { 0 };

        for pos in 0..m {
            let j = lp.basis[pos];
            lp.value[j] -= sigma * alpha[pos] * step;
        }
        lp.value[enter] += sigma * step;

        match leave {
            None => {
                lp.state[enter] = if sigma > 0.0 {
                    VarState::Upper
                } else {
                    VarState::Lower
                };
                lp.value[enter] = if sigma > 0.0 { eu } else { el };
            }
            Some((pos, to)) => {
                let out = lp.basis[pos];
                let (lo, hi) = lp.bounds(out);
                lp.state[out] = to;
                lp.value[out] = if to == VarState::Lower { lo } else { hi };
                lp.basis[pos] = enter;
                lp.state[enter] = VarState::Basic;
                let piv = alpha[pos];
                for c in 0..m {
                    lp.binv[pos * m + c] /= piv;
                }
                for r in 0..m {
                    if r != pos && alpha[r] != 0.0 {
                        let f = alpha[r];
                        for c in 0..m {
                            lp.binv[r * m + c] -= f * lp.binv[pos * m + c];
                        }
                    }
                }
            }
        }
    }

    lp.reinvert()?;
    let pi = lp.multipliers();
    let mut weights: Vec<f64> = pi.iter().map(|p| -p).collect();
    if weights.iter().any(|&w| w < -1e-7 || !w.is_finite()) {
        return Err(Error::Solver {
            message: format!("weight LP produced infeasible weights {weights:?}"),
            iterations,
        });
    }
    weights.iter_mut().for_each(|w| *w = w.max(0.0));
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Solver {
            message: "weight LP multipliers sum to zero".into(),
            iterations,
        });
    }
    weights.iter_mut().for_each(|w| *w /= total);

    let mut objective = mean_loss(predictions, responses, &lp.taus, m, &weights);
    let dual: f64 = (0..rows).map(|r| responses[r] * lp.value[r]).sum::<f64>()
        + lp.value[lp.lambda()];
    let dual = dual / rows as f64;

    // deterministic tie-break toward the lowest-index optimal vertex
    let slack = 1e-12 * (1.0 + objective.abs());
    if let Some(j) = (0..m).find(|&j| vertex_losses[j] <= objective + slack) {
        weights = vec![0.0; m];
        weights[j] = 1.0;
        objective = vertex_losses[j];
    }

    Ok(WeightLpSolution {
        weights,
        objective,
        iterations,
        status,
        gap: objective - dual,
    })
}
