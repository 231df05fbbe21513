//! Weight selection by leave-one-out composite loss, per-level weights, and
//! information-criterion selection and smoothing.

use serde::{Deserialize, Serialize};

use crate::cqr::CqrFit;
use crate::error::{Error, Result};
use crate::loss::{rho, QuantileGrid};
use crate::lp::solve_simplex_weight_lp;
use crate::models::{CandidateModel, LooPredictionTensor, TensorMode};

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("weight vector is empty"));
        }
        if let Some(m) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain(format!(
                "weight {} is {} (must be finite and nonnegative)",
                m + 1,
                weights[m]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// The unit vector on model `m` (0-based) out of `models`.
    pub fn vertex(m: usize, models: usize) -> Result<Self> {
        if m >= models {
            return Err(Error::shape(format!("vertex {m} out of range for {models} models")));
        }
        let mut w = vec![0.0; models];
        w[m] = 1.0;
        Ok(Self(w))
    }

    pub fn uniform(models: usize) -> Result<Self> {
        if models == 0 {
            return Err(Error::domain("weight vector is empty"));
        }
        Ok(Self(vec![1.0 / models as f64; models]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

fn check_tensor(tensor: &LooPredictionTensor, y: &[f64], grid: &QuantileGrid) -> Result<()> {
    if tensor.n() != y.len() {
        return Err(Error::shape(format!(
            "tensor has {} observations, response has {}",
            tensor.n(),
            y.len()
        )));
    }
    if tensor.levels() != grid.len() {
        return Err(Error::shape(format!(
            "tensor has {} levels, grid has {}",
            tensor.levels(),
            grid.len()
        )));
    }
    Ok(())
}

/// `(1/nK) sum_{i,k} rho_{tau_k}(y_i - sum_m w_m yhat_{ikm})`.
pub fn cv_criterion(
    tensor: &LooPredictionTensor,
    y: &[f64],
    grid: &QuantileGrid,
    w: &WeightVector,
) -> Result<f64> {
    check_tensor(tensor, y, grid)?;
    if w.len() != tensor.models() {
        return Err(Error::shape(format!(
            "{} weights for {} models",
            w.len(),
            tensor.models()
        )));
    }
    let n = y.len();
    let mut total = 0.0;
    for (k, &tau) in grid.levels().iter().enumerate() {
        for (i, &yi) in y.iter().enumerate() {
            let fit: f64 = (0..w.len()).map(|m| w.0[m] * tensor.get(i, k, m)).sum();
            total += rho(yi - fit, tau);
        }
    }
    Ok(total / (n * grid.len()) as f64)
}

/// Leave-one-out composite loss of each model on its own.
pub fn single_model_losses(
    tensor: &LooPredictionTensor,
    y: &[f64],
    grid: &QuantileGrid,
) -> Result<Vec<f64>> {
    (0..tensor.models())
        .map(|m| cv_criterion(tensor, y, grid, &WeightVector::vertex(m, tensor.models())?))
        .collect()
}

/// Simplex weights minimizing [`cv_criterion`] on a composite-mode tensor.
pub fn select_weights_mcvc(
    tensor: &LooPredictionTensor,
    y: &[f64],
    grid: &QuantileGrid,
) -> Result<WeightVector> {
    check_tensor(tensor, y, grid)?;
    if tensor.mode() != TensorMode::Composite {
        return Err(Error::domain("composite weights need a composite-mode tensor"));
    }
    let responses: Vec<f64> = (0..grid.len()).flat_map(|_| y.iter().copied()).collect();
    let sol = solve_simplex_weight_lp(tensor.stacked_predictions(), &responses, tensor.models(), grid)?;
    WeightVector::new(sol.weights)
}

/// One weight vector per level, each minimizing that level's leave-one-out
/// check loss on a per-quantile tensor.
pub fn select_weights_mcv0(
    tensor: &LooPredictionTensor,
    y: &[f64],
    grid: &QuantileGrid,
) -> Result<Vec<WeightVector>> {
    check_tensor(tensor, y, grid)?;
    if tensor.mode() == TensorMode::Composite && grid.len() > 1 {
        return Err(Error::domain("per-level weights need a per-quantile tensor"));
    }
    grid.levels()
        .iter()
        .enumerate()
        .map(|(k, &tau)| {
            let single = QuantileGrid::single(tau)?;
            let sol = solve_simplex_weight_lp(tensor.level_slice(k), y, tensor.models(), &single)
                .map_err(|e| e.context(format!("weights at tau {tau}")))?;
            WeightVector::new(sol.weights)
        })
        .collect()
}

/// Which residuals enter the log-loss term of AIC_c and SIC_c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcResiduals {
    /// Leave-one-out fitted values.
    #[default]
    LeaveOneOut,
    /// Full-sample residuals.
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionEntry {
    pub id: usize,
    pub size: usize,
    /// Mean composite loss inside the logarithm.
    pub ic_loss: f64,
    /// Leave-one-out mean composite loss (CV_c score).
    pub cv: f64,
    /// `-inf` when `ic_loss` is zero.
    pub aic: f64,
    pub sic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionTable {
    pub entries: Vec<CriterionEntry>,
    pub aic_weights: WeightVector,
    pub sic_weights: WeightVector,
}

impl CriterionTable {
    /// Scores from per-model mean losses. `sizes[m]` is the covariate count.
    pub fn from_losses(
        ids: &[usize],
        sizes: &[usize],
        ic_losses: &[f64],
        cv_losses: &[f64],
        n: usize,
        levels: usize,
    ) -> Result<Self> {
        let mm = ids.len();
        if mm == 0 {
            return Err(Error::domain("criterion table needs at least one model"));
        }
        if sizes.len() != mm || ic_losses.len() != mm || cv_losses.len() != mm {
            return Err(Error::shape("criterion inputs have different lengths"));
        }
        if let Some(bad) = ic_losses
            .iter()
            .chain(cv_losses)
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::domain(format!("mean loss {bad} is not a finite nonnegative number")));
        }
        let nk = (n * levels) as f64;
        let entries: Vec<CriterionEntry> = (0..mm)
            .map(|m| {
                let dof = (sizes[m] + levels) as f64;
                let fit_term = 2.0 * nk * ic_losses[m].ln();
                CriterionEntry {
                    id: ids[m],
                    size: sizes[m],
                    ic_loss: ic_losses[m],
                    cv: cv_losses[m],
                    aic: fit_term + 2.0 * dof,
                    sic: fit_term + dof * nk.ln(),
                }
            })
            .collect();
        let aic: Vec<f64> = entries.iter().map(|e| e.aic).collect();
        let sic: Vec<f64> = entries.iter().map(|e| e.sic).collect();
        Ok(Self {
            aic_weights: smoothed_weights(&aic)?,
            sic_weights: smoothed_weights(&sic)?,
            entries,
        })
    }

    pub fn scores(&self, rule: SelectionRule) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| match rule {
                SelectionRule::Aic => e.aic,
                SelectionRule::Sic => e.sic,
                SelectionRule::Cv => e.cv,
            })
            .collect()
    }
}

/// `exp(-s_m / 2)` normalized, computed relative to the smallest score.
/// Scores of `-inf` (zero loss) split the weight equally among themselves.
pub fn smoothed_weights(scores: &[f64]) -> Result<WeightVector> {
    if scores.is_empty() {
        return Err(Error::domain("no scores to smooth"));
    }
    if scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::domain("scores must be finite or -inf"));
    }
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = if best == f64::NEG_INFINITY {
        scores
            .iter()
            .map(|&s| if s == f64::NEG_INFINITY { 1.0 } else { 0.0 })
            .collect()
    } else {
        scores.iter().map(|&s| (-(s - best) / 2.0).exp()).collect()
    };
    let total: f64 = raw.iter().sum();
    WeightVector::new(raw.into_iter().map(|v| v / total).collect())
}

/// AIC_c, SIC_c and CV_c scores for each model.
///
/// `loo` must be a composite-mode tensor over `models`; `fits` are the
/// full-sample fits, used only with [`IcResiduals::FullSample`].
pub fn information_criteria(
    models: &[CandidateModel],
    fits: &[CqrFit],
    loo: &LooPredictionTensor,
    y: &[f64],
    grid: &QuantileGrid,
    residuals: IcResiduals,
) -> Result<CriterionTable> {
    check_tensor(loo, y, grid)?;
    if loo.mode() != TensorMode::Composite {
        return Err(Error::domain("information criteria need a composite-mode tensor"));
    }
    if models.len() != loo.models() || fits.len() != models.len() {
        return Err(Error::shape(format!(
            "{} models, {} fits, tensor over {} models",
            models.len(),
            fits.len(),
            loo.models()
        )));
    }
    let cv = single_model_losses(loo, y, grid)?;
    let ic = match residuals {
        IcResiduals::LeaveOneOut => cv.clone(),
        IcResiduals::FullSample => fits
            .iter()
            .map(|f| f.objective.max(0.0) / (y.len() * grid.len()) as f64)
            .collect(),
    };
    let ids: Vec<usize> = models.iter().map(|m| m.id).collect();
    let sizes: Vec<usize> = models.iter().map(|m| m.size()).collect();
    CriterionTable::from_losses(&ids, &sizes, &ic, &cv, y.len(), grid.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    Aic,
    Sic,
    Cv,
}

/// Id of the model with the smallest score; ties go to fewer covariates,
/// then the smaller id.
pub fn select_model(table: &CriterionTable, rule: SelectionRule) -> Result<usize> {
    let scores = table.scores(rule);
    table
        .entries
        .iter()
        .zip(&scores)
        .min_by(|(ea, sa), (eb, sb)| {
            sa.total_cmp(sb)
                .then(ea.size.cmp(&eb.size))
                .then(ea.id.cmp(&eb.id))
        })
        .map(|(e, _)| e.id)
        .ok_or_else(|| Error::domain("criterion table is empty"))
}
