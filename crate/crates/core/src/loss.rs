//! Check-loss primitives.
//!
//! The check function `rho_tau(e) = e * (tau - 1{e <= 0})` is the asymmetric
//! absolute loss whose minimizer is the `tau`-quantile. Every estimator and
//! criterion in this crate is a sum of these.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered composite quantile levels `tau_1 < ... < tau_K`, each in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::domain("quantile grid must contain at least one level"));
        }
        for &tau in &levels {
            check_tau(tau)?;
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!(
                "quantile levels must be strictly increasing, got {levels:?}"
            )));
        }
        Ok(Self { levels })
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    /// `tau_k = k / (K + 1)` for `k = 1..=K`.
    pub fn equispaced(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|j| j as f64 / (k + 1) as f64).collect())
    }

    /// Parses a comma-separated list such as `0.05,0.5,0.95`.
    pub fn parse(text: &str) -> Result<Self> {
        let levels = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::domain(format!("invalid quantile level '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn tau(&self, k: usize) -> f64 {
        self.levels[k]
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(grid: QuantileGrid) -> Self {
        grid.levels
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "quantile level {tau} outside the open interval (0, 1)"
        )))
    }
}

/// `rho_tau(residual)`, without validating `tau`.
#[inline]
pub fn rho(residual: f64, tau: f64) -> f64 {
    if residual > 0.0 {
        residual * tau
    } else {
        residual * (tau - 1.0)
    }
}

/// `psi_tau(residual) = tau - 1{residual <= 0}`, without validating `tau`.
#[inline]
pub fn psi(residual: f64, tau: f64) -> f64 {
    if residual > 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

pub fn check_loss(residual: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(residual, tau))
}

/// A subgradient of the check loss. At zero the indicator is taken as 1.
pub fn check_subgradient(residual: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(psi(residual, tau))
}

/// `sum_k sum_i rho_{tau_k}(r_ik)` for an `n x K` residual matrix given as rows.
pub fn composite_objective<R: AsRef<[f64]>>(residuals: &[R], grid: &QuantileGrid) -> Result<f64> {
    let k = grid.len();
    let mut total = 0.0;
    for (i, row) in residuals.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != k {
            return Err(Error::shape(format!(
                "residual row {i} has {} columns, grid has {k} levels",
                row.len()
            )));
        }
        total += row
            .iter()
            .zip(grid.levels())
            .map(|(&r, &tau)| rho(r, tau))
            .sum::<f64>();
    }
    Ok(total)
}

/// Composite objective for residuals stacked block-by-block: entry `k * n + i`
/// holds the residual of observation `i` at level `k`.
pub fn stacked_objective(residuals: &[f64], grid: &QuantileGrid) -> Result<f64> {
    let k = grid.len();
    if !residuals.len().is_multiple_of(k) {
        return Err(Error::shape(format!(
            "{} stacked residuals cannot be split into {k} blocks",
            residuals.len()
        )));
    }
    let n = residuals.len() / k;
    Ok(residuals
        .chunks(n.max(1))
        .zip(grid.levels())
        .map(|(block, &tau)| block.iter().map(|&r| rho(r, tau)).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, 0.5).unwrap(), 1.0);
        assert!((check_loss(-1.0, 0.05).unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(check_loss(0.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(check_subgradient(1.0, 0.5).unwrap(), 0.5);
        assert!((check_subgradient(-2.0, 0.95).unwrap() + 0.05).abs() < 1e-15);
        assert_eq!(check_subgradient(0.0, 0.5).unwrap(), -0.5);
    }

    #[test]
    fn tau_outside_unit_interval_rejected() {
        for tau in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(check_loss(1.0, tau), Err(Error::Domain(_))));
            assert!(matches!(check_subgradient(1.0, tau), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn composite_objective_examples() {
        let grid2 = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        let zeros = vec![vec![0.0; 2]; 3];
        assert_eq!(composite_objective(&zeros, &grid2).unwrap(), 0.0);

        let single = QuantileGrid::single(0.5).unwrap();
        assert_eq!(composite_objective(&[[2.0]], &single).unwrap(), 1.0);

        let m = [[1.0, -1.0], [1.0, -1.0]];
        assert!((composite_objective(&m, &grid2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn composite_objective_shape_mismatch() {
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        assert!(matches!(
            composite_objective(&[[1.0, 2.0, 3.0]], &grid),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stacked_matches_row_layout() {
        let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
        // rows (1,-1), (2,0.5) stacked by level
        let stacked = [1.0, 2.0, -1.0, 0.5];
        let rows = [[1.0, -1.0], [2.0, 0.5]];
        assert_eq!(
            stacked_objective(&stacked, &grid).unwrap(),
            composite_objective(&rows, &grid).unwrap()
        );
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![]).is_err());
        assert!(QuantileGrid::new(vec![0.5, 0.5]).is_err());
        assert!(QuantileGrid::new(vec![0.7, 0.2]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.5]).is_err());
        let g = QuantileGrid::equispaced(5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g.tau(0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            QuantileGrid::parse("0.05, 0.5,0.95").unwrap().levels(),
            &[0.05, 0.5, 0.95]
        );
    }
}
