//! Composite and single-level quantile regression fits for one candidate design.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::lp::{solve_check_loss_lp, LpOptions, LpSolution, LpStatus, PiecewiseLinearProgram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub status: LpStatus,
    pub gap: f64,
    pub vertex: bool,
}

/// `K` intercepts and one slope vector shared across the quantile levels.
///
/// Intercepts are not forced to be monotone in `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrFit {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Dataset columns the slopes refer to, in order.
    pub columns: Vec<usize>,
    pub grid: QuantileGrid,
    /// Composite check loss on the fitting sample (a sum, not a mean).
    pub objective: f64,
    pub diagnostics: FitDiagnostics,
    #[serde(skip)]
    solution: Option<LpSolution>,
}

impl CqrFit {
    pub fn levels(&self) -> usize {
        self.intercepts.len()
    }

    /// `b_k + x' beta` for a row holding only this model's covariates.
    pub fn predict(&self, x_row: &[f64], k: usize) -> Result<f64> {
        if k >= self.intercepts.len() {
            return Err(Error::shape(format!(
                "quantile index {k} out of range for {} levels",
                self.intercepts.len()
            )));
        }
        if x_row.len() != self.slopes.len() {
            return Err(Error::shape(format!(
                "row has {} covariates, fit has {}",
                x_row.len(),
                self.slopes.len()
            )));
        }
        Ok(self.predict_unchecked(x_row, k))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x_row: &[f64], k: usize) -> f64 {
        self.intercepts[k] + x_row.iter().zip(&self.slopes).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Prediction from a full dataset row; picks out this model's columns.
    pub fn predict_row(&self, full_row: &[f64], k: usize) -> Result<f64> {
        if k >= self.intercepts.len() {
            return Err(Error::shape(format!("quantile index {k} out of range")));
        }
        if let Some(&j) = self.columns.iter().find(|&&j| j >= full_row.len()) {
            return Err(Error::shape(format!(
                "row has {} covariates, fit needs column {j}",
                full_row.len()
            )));
        }
        Ok(self.predict_full_unchecked(full_row, k))
    }

    #[inline]
    pub(crate) fn predict_full_unchecked(&self, full_row: &[f64], k: usize) -> f64 {
        self.intercepts[k]
            + self
                .columns
                .iter()
                .zip(&self.slopes)
                .map(|(&j, b)| full_row[j] * b)
                .sum::<f64>()
    }

    /// Subgradient optimality sums on `data` (the sample the fit used).
    pub fn certificate(&self, data: &Dataset) -> Result<SubgradientCertificate> {
        let prog = program(data, &self.columns, &self.grid, None)?;
        let params: Vec<f64> = self.intercepts.iter().chain(&self.slopes).copied().collect();
        let duals = self
            .solution
            .as_ref()
            .map(|s| s.duals.clone())
            .unwrap_or_default();
        let sums = prog.subgradient_sums(&params, &duals, 1e-9);
        let kk = self.intercepts.len();
        let column_norms = self
            .columns
            .iter()
            .map(|&j| data.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(SubgradientCertificate {
            intercept_sums: sums[..kk].to_vec(),
            slope_sums: sums[kk..].to_vec(),
            column_norms,
            n: data.n(),
        })
    }
}

/// Subgradient sums `sum_i sum_k g_ik z_ik` at a fit. Rows the fit interpolates
/// exactly use the solver's dual multiplier, every other row uses `psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientCertificate {
    pub intercept_sums: Vec<f64>,
    pub slope_sums: Vec<f64>,
    pub column_norms: Vec<f64>,
    pub n: usize,
}

impl SubgradientCertificate {
    /// `|intercept sum| <= tol * n` and `|slope sum_j| <= tol * ||x_j|| * K`.
    pub fn holds(&self, tol: f64) -> bool {
        let kk = self.intercept_sums.len() as f64;
        self.intercept_sums
            .iter()
            .all(|s| s.abs() <= tol * self.n as f64)
            && self
                .slope_sums
                .iter()
                .zip(&self.column_norms)
                .all(|(s, norm)| s.abs() <= tol * norm * kk)
    }
}

pub(crate) fn program(
    data: &Dataset,
    columns: &[usize],
    grid: &QuantileGrid,
    skip: Option<usize>,
) -> Result<PiecewiseLinearProgram> {
    data.check_columns(columns)?;
    let (x, y) = data.design(columns, skip);
    PiecewiseLinearProgram::new(x, y, columns.len(), grid)
}

/// Options and warm start for a single fit.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitRequest<'a> {
    pub options: LpOptions,
    pub warm_start: Option<&'a CqrFit>,
    /// Observation to leave out of the fitting sample.
    pub skip: Option<usize>,
}

pub fn fit_cqr(data: &Dataset, columns: &[usize], grid: &QuantileGrid) -> Result<CqrFit> {
    fit_cqr_with(data, columns, grid, FitRequest::default())
}

pub fn fit_cqr_with(
    data: &Dataset,
    columns: &[usize],
    grid: &QuantileGrid,
    request: FitRequest<'_>,
) -> Result<CqrFit> {
    let prog = program(data, columns, grid, request.skip)?;
    let warm = request
        .warm_start
        .and_then(|f| f.solution.as_ref())
        .filter(|s| s.params.len() == prog.num_params());
    let sol = solve_check_loss_lp(&prog, warm, &request.options)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver {
            message: format!(
                "check-loss fit did not converge (status {:?}, gap {:.3e})",
                sol.status, sol.gap
            ),
            iterations: sol.iterations,
        });
    }
    let kk = grid.len();
    Ok(CqrFit {
        intercepts: sol.params[..kk].to_vec(),
        slopes: sol.params[kk..].to_vec(),
        columns: columns.to_vec(),
        grid: grid.clone(),
        objective: sol.objective,
        diagnostics: FitDiagnostics {
            iterations: sol.iterations,
            status: sol.status,
            gap: sol.gap,
            vertex: sol.vertex,
        },
        solution: Some(sol),
    })
}

/// Ordinary quantile regression at a single level; a composite fit on a
/// one-level grid.
pub fn fit_qr(data: &Dataset, columns: &[usize], tau: f64) -> Result<CqrFit> {
    fit_cqr(data, columns, &QuantileGrid::single(tau)?)
}
