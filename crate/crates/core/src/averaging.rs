//! Averaged quantile predictors, holdout prediction error and CPE reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cqr::CqrFit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{rho, QuantileGrid};
use crate::methods::Method;
use crate::weighting::WeightVector;

/// Convex combination of per-model quantile predictions.
///
/// Composite predictors hold one composite fit per model and one weight
/// vector. Per-level predictors hold `K` single-level fits per model and a
/// weight vector per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedPredictor {
    grid: QuantileGrid,
    /// `fits[m]` has length 1 (composite) or `K` (per level).
    fits: Vec<Vec<CqrFit>>,
    /// Length 1 (composite) or `K` (per level).
    weights: Vec<WeightVector>,
    per_level: bool,
}

impl AveragedPredictor {
    pub fn composite(fits: Vec<CqrFit>, weights: WeightVector, grid: &QuantileGrid) -> Result<Self> {
        if fits.len() != weights.len() {
            return Err(Error::shape(format!(
                "{} fits but {} weights",
                fits.len(),
                weights.len()
            )));
        }
        if let Some(m) = fits.iter().position(|f| f.grid != *grid) {
            return Err(Error::shape(format!("fit {} uses a different grid", m + 1)));
        }
        Ok(Self {
            grid: grid.clone(),
            fits: fits.into_iter().map(|f| vec![f]).collect(),
            weights: vec![weights],
            per_level: false,
        })
    }

    /// `fits[m][k]` is model `m` fitted at level `tau_k` alone.
    pub fn per_level(
        fits: Vec<Vec<CqrFit>>,
        weights: Vec<WeightVector>,
        grid: &QuantileGrid,
    ) -> Result<Self> {
        let kk = grid.len();
        if weights.len() != kk {
            return Err(Error::shape(format!("{} weight vectors for {kk} levels", weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| w.len() != fits.len()) {
            return Err(Error::shape(format!("{} weights for {} models", w.len(), fits.len())));
        }
        for (m, per) in fits.iter().enumerate() {
            if per.len() != kk {
                return Err(Error::shape(format!("model {} has {} level fits", m + 1, per.len())));
            }
            for (k, f) in per.iter().enumerate() {
                if f.grid.levels() != [grid.tau(k)] {
                    return Err(Error::shape(format!(
                        "model {} fit {} is not a single-level fit at {}",
                        m + 1,
                        k + 1,
                        grid.tau(k)
                    )));
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            fits,
            weights,
            per_level: true,
        })
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn models(&self) -> usize {
        self.fits.len()
    }

    /// Weight vector used at level `k`.
    pub fn weights(&self, k: usize) -> &WeightVector {
        if self.per_level {
            &self.weights[k]
        } else {
            &self.weights[0]
        }
    }

    /// `fits()[m]` holds one composite fit or `K` single-level fits.
    pub fn fits(&self) -> &[Vec<CqrFit>] {
        &self.fits
    }

    pub fn is_per_level(&self) -> bool {
        self.per_level
    }

    /// Largest column index any model uses, plus one.
    pub fn required_columns(&self) -> usize {
        self.fits
            .iter()
            .flatten()
            .flat_map(|f| f.columns.iter().map(|&j| j + 1))
            .max()
            .unwrap_or(0)
    }

    #[inline]
    fn predict_unchecked(&self, row: &[f64], k: usize) -> f64 {
        let w = self.weights(k).as_slice();
        self.fits
            .iter()
            .zip(w)
            .filter(|(_, &wm)| wm != 0.0)
            .map(|(per, &wm)| {
                let (fit, level) = if self.per_level { (&per[k], 0) } else { (&per[0], k) };
                wm * fit.predict_full_unchecked(row, level)
            })
            .sum()
    }
}

/// Weighted prediction of level `k` for a full dataset row.
pub fn predict_averaged(pred: &AveragedPredictor, x_row: &[f64], k: usize) -> Result<f64> {
    if k >= pred.grid.len() {
        return Err(Error::shape(format!(
            "quantile index {k} out of range for {} levels",
            pred.grid.len()
        )));
    }
    if x_row.len() < pred.required_columns() {
        return Err(Error::shape(format!(
            "row has {} covariates, predictor needs {}",
            x_row.len(),
            pred.required_columns()
        )));
    }
    Ok(pred.predict_unchecked(x_row, k))
}

/// Mean composite check loss `(1/(n_s K)) sum_s sum_k rho(y_s - yhat_sk)` on
/// a holdout sample.
pub fn prediction_error(pred: &AveragedPredictor, holdout: &Dataset, grid: &QuantileGrid) -> Result<f64> {
    if *grid != pred.grid {
        return Err(Error::shape("evaluation grid differs from the predictor's grid"));
    }
    if holdout.p() < pred.required_columns() {
        return Err(Error::shape(format!(
            "holdout has {} covariates, predictor needs {}",
            holdout.p(),
            pred.required_columns()
        )));
    }
    let mut total = 0.0;
    for s in 0..holdout.n() {
        let row = holdout.row(s);
        let ys = holdout.y()[s];
        for (k, &tau) in grid.levels().iter().enumerate() {
            total += rho(ys - pred.predict_unchecked(row, k), tau);
        }
    }
    Ok(total / (holdout.n() * grid.len()) as f64)
}

/// Mean of the per-replication prediction errors.
pub fn cpe_aggregate(pe_samples: &[f64]) -> Result<f64> {
    if pe_samples.is_empty() {
        return Err(Error::domain("no prediction-error samples to aggregate"));
    }
    Ok(pe_samples.iter().sum::<f64>() / pe_samples.len() as f64)
}

pub const SCHEMA_VERSION: u32 = 1;

/// One (axis value, method) cell of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub axis_value: f64,
    pub method: Method,
    pub cpe: f64,
    /// Per-replication (or per-split) prediction errors.
    pub pe: Vec<f64>,
}

/// CPE per method along one axis (R^2 target, window length, training size),
/// with fixed context fields such as the setting and sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub axis: String,
    pub context: Vec<(String, String)>,
    pub cells: Vec<ReportCell>,
}

impl EvaluationReport {
    pub fn new(axis: impl Into<String>, context: Vec<(String, String)>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            axis: axis.into(),
            context,
            cells: Vec::new(),
        }
    }

    /// Adds a cell; its CPE is the mean of `pe`.
    pub fn push(&mut self, axis_value: f64, method: Method, pe: Vec<f64>) -> Result<()> {
        if let Some(bad) = pe.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("prediction error {bad} is not a finite nonnegative number")));
        }
        let cpe = cpe_aggregate(&pe)?;
        self.cells.push(ReportCell {
            axis_value,
            method,
            cpe,
            pe,
        });
        Ok(())
    }

    pub fn cell(&self, axis_value: f64, method: Method) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.axis_value == axis_value && c.method == method)
    }

    pub fn csv_header(&self) -> Vec<String> {
        self.context
            .iter()
            .map(|(k, _)| k.clone())
            .chain([self.axis.clone(), "method".into(), "cpe".into(), "replications".into()])
            .collect()
    }

    /// One row per cell: context fields, axis value, method, CPE, count.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for c in &self.cells {
            let mut rec: Vec<String> = self.context.iter().map(|(_, v)| v.clone()).collect();
            rec.push(format_number(c.axis_value));
            rec.push(c.method.name().to_string());
            rec.push(format_number(c.cpe));
            rec.push(c.pe.len().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Long-format `(axis value, method, CPE)` rows for plotting.
    pub fn write_plot_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.axis.as_str(), "method", "cpe"])?;
        for c in &self.cells {
            w.write_record([format_number(c.axis_value), c.method.label().to_string(), format_number(c.cpe)])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}
