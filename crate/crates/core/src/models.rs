//! Candidate model sets, full-sample fits and leave-one-out prediction tensors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqr::{fit_cqr_with, CqrFit, FitRequest};
use crate::data::{correlation, Dataset};
use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::lp::LpOptions;

/// One candidate model: an intercept per quantile level plus the slopes on
/// `columns`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateModel {
    /// 1-based.
    pub id: usize,
    pub columns: Vec<usize>,
}

impl CandidateModel {
    /// Number of covariates, excluding the intercepts.
    pub fn size(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnOrdering {
    #[default]
    Given,
    /// Descending `|corr(x_j, y)|`; ties keep file order.
    CorrelationSorted,
}

/// Column indices by descending absolute correlation with the response.
/// Constant columns have correlation 0.
pub fn correlation_order(data: &Dataset) -> Vec<usize> {
    let scores: Vec<f64> = (0..data.p())
        .map(|j| correlation(&data.column(j), data.y()).abs())
        .collect();
    let mut order: Vec<usize> = (0..data.p()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// `count` nested models: model `m` holds the first `m` columns of the ordering.
pub fn build_nested_models(
    data: &Dataset,
    count: usize,
    ordering: ColumnOrdering,
) -> Result<Vec<CandidateModel>> {
    if count == 0 {
        return Err(Error::domain("need at least one candidate model"));
    }
    if count > data.p() {
        return Err(Error::domain(format!(
            "{count} nested models requested but only {} covariates available",
            data.p()
        )));
    }
    let order = match ordering {
        ColumnOrdering::Given => (0..data.p()).collect(),
        ColumnOrdering::CorrelationSorted => correlation_order(data),
    };
    Ok((1..=count)
        .map(|m| CandidateModel {
            id: m,
            columns: order[..m].to_vec(),
        })
        .collect())
}

/// Candidate models from explicit column lists, numbered in the given order.
pub fn explicit_models(data: &Dataset, lists: Vec<Vec<usize>>) -> Result<Vec<CandidateModel>> {
    if lists.is_empty() {
        return Err(Error::domain("need at least one candidate model"));
    }
    lists
        .into_iter()
        .enumerate()
        .map(|(i, columns)| {
            data.check_columns(&columns)
                .map_err(|e| e.context(format!("model {}", i + 1)))?;
            Ok(CandidateModel { id: i + 1, columns })
        })
        .collect()
}

/// Full-sample composite fits, one per model.
pub fn fit_all(data: &Dataset, models: &[CandidateModel], grid: &QuantileGrid) -> Result<Vec<CqrFit>> {
    fit_all_with(data, models, grid, &LpOptions::default())
}

pub fn fit_all_with(
    data: &Dataset,
    models: &[CandidateModel],
    grid: &QuantileGrid,
    options: &LpOptions,
) -> Result<Vec<CqrFit>> {
    models
        .par_iter()
        .map(|model| {
            let request = FitRequest {
                options: *options,
                ..FitRequest::default()
            };
            fit_cqr_with(data, &model.columns, grid, request)
                .map_err(|e| e.context(format!("model {}", model.id)))
        })
        .collect()
}

/// Full-sample single-level fits: `result[m][k]` is model `m` at `tau_k`.
pub fn fit_all_per_quantile(
    data: &Dataset,
    models: &[CandidateModel],
    grid: &QuantileGrid,
    options: &LpOptions,
) -> Result<Vec<Vec<CqrFit>>> {
    let singles = single_grids(grid)?;
    models
        .par_iter()
        .map(|model| {
            singles
                .iter()
                .map(|g| {
                    let request = FitRequest {
                        options: *options,
                        ..FitRequest::default()
                    };
                    fit_cqr_with(data, &model.columns, g, request).map_err(|e| {
                        e.context(format!("model {} at tau {}", model.id, g.tau(0)))
                    })
                })
                .collect()
        })
        .collect()
}

fn single_grids(grid: &QuantileGrid) -> Result<Vec<QuantileGrid>> {
    grid.levels().iter().map(|&t| QuantileGrid::single(t)).collect()
}

/// How the predictions in a [`LooPredictionTensor`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorMode {
    /// Leave-one-out composite fits with slopes shared across levels.
    Composite,
    /// Leave-one-out single-level fits, one per level.
    PerQuantile,
    /// Single-level fits on the full sample, evaluated at the training rows.
    /// Not a jackknife; kept for the literal full-sample reading of the
    /// per-quantile criterion.
    PerQuantileFullSample,
}

/// Predictions `yhat[i, k, m]` for observation `i`, level `k`, model `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooPredictionTensor {
    n: usize,
    levels: usize,
    models: usize,
    /// Index `(k * n + i) * models + m`.
    values: Vec<f64>,
    mode: TensorMode,
}

impl LooPredictionTensor {
    pub fn from_values(
        n: usize,
        levels: usize,
        models: usize,
        values: Vec<f64>,
        mode: TensorMode,
    ) -> Result<Self> {
        if values.len() != n * levels * models {
            return Err(Error::shape(format!(
                "tensor has {} values, expected {n} x {levels} x {models}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("tensor contains non-finite predictions"));
        }
        Ok(Self {
            n,
            levels,
            models,
            values,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn mode(&self) -> TensorMode {
        self.mode
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, m: usize) -> f64 {
        self.values[(k * self.n + i) * self.models + m]
    }

    /// Row-major `(n K) x M` matrix with rows ordered `k * n + i`.
    pub fn stacked_predictions(&self) -> &[f64] {
        &self.values
    }

    /// The `n x M` slice of level `k`, rows ordered by observation.
    pub fn level_slice(&self, k: usize) -> &[f64] {
        let w = self.n * self.models;
        &self.values[k * w..(k + 1) * w]
    }

    /// Single model `m` as a one-model tensor.
    pub fn single_model(&self, m: usize) -> Self {
        let values = self
            .values
            .chunks(self.models)
            .map(|row| row[m])
            .collect();
        Self {
            n: self.n,
            levels: self.levels,
            models: 1,
            values,
            mode: self.mode,
        }
    }
}

/// Leave-one-out fits within a model are warm-started along fixed chunks of
/// this many observations, so results do not depend on the thread count.
const CHUNK: usize = 25;

pub fn jackknife_tensor(
    data: &Dataset,
    models: &[CandidateModel],
    grid: &QuantileGrid,
    mode: TensorMode,
) -> Result<LooPredictionTensor> {
    jackknife_tensor_with(data, models, grid, mode, &LpOptions::default())
}

pub fn jackknife_tensor_with(
    data: &Dataset,
    models: &[CandidateModel],
    grid: &QuantileGrid,
    mode: TensorMode,
    options: &LpOptions,
) -> Result<LooPredictionTensor> {
    let n = data.n();
    let kk = grid.len();
    let mm = models.len();
    if mm == 0 {
        return Err(Error::domain("need at least one candidate model"));
    }
    for model in models {
        data.check_columns(&model.columns)
            .map_err(|e| e.context(format!("model {}", model.id)))?;
        let needed = model.size() + kk + 1;
        if mode != TensorMode::PerQuantileFullSample && n < needed {
            return Err(Error::domain(format!(
                "model {} needs at least {needed} observations for leave-one-out fits, have {n}",
                model.id
            )));
        }
    }

    let mut values = vec![0.0; n * kk * mm];
    match mode {
        TensorMode::Composite => {
            let jobs = chunk_jobs(mm, 1, n);
            let cells = run_jobs(data, models, std::slice::from_ref(grid), &jobs, options)?;
            for (job, preds) in jobs.iter().zip(cells) {
                for (off, row) in preds.into_iter().enumerate() {
                    let i = job.start + off;
                    for (k, v) in row.into_iter().enumerate() {
                        values[(k * n + i) * mm + job.model] = v;
                    }
                }
            }
        }
        TensorMode::PerQuantile => {
            let singles = single_grids(grid)?;
            let jobs = chunk_jobs(mm, kk, n);
            let cells = run_jobs(data, models, &singles, &jobs, options)?;
            for (job, preds) in jobs.iter().zip(cells) {
                for (off, row) in preds.into_iter().enumerate() {
                    let i = job.start + off;
                    values[(job.level * n + i) * mm + job.model] = row[0];
                }
            }
        }
        TensorMode::PerQuantileFullSample => {
            let fits = fit_all_per_quantile(data, models, grid, options)?;
            for (m, per_level) in fits.iter().enumerate() {
                for (k, fit) in per_level.iter().enumerate() {
                    for i in 0..n {
                        values[(k * n + i) * mm + m] = fit.predict_full_unchecked(data.row(i), 0);
                    }
                }
            }
        }
    }
    LooPredictionTensor::from_values(n, kk, mm, values, mode)
}

struct Job {
    model: usize,
    level: usize,
    start: usize,
    end: usize,
}

fn chunk_jobs(models: usize, levels: usize, n: usize) -> Vec<Job> {
    let mut jobs = Vec::new();
    for model in 0..models {
        for level in 0..levels {
            let mut start = 0;
            while start < n {
                let end = (start + CHUNK).min(n);
                jobs.push(Job {
                    model,
                    level,
                    start,
                    end,
                });
                start = end;
            }
        }
    }
    jobs
}

/// For each job, the predictions at every level of its grid for the held-out
/// rows `start..end`, each from a fit that excluded that row.
fn run_jobs(
    data: &Dataset,
    models: &[CandidateModel],
    grids: &[QuantileGrid],
    jobs: &[Job],
    options: &LpOptions,
) -> Result<Vec<Vec<Vec<f64>>>> {
    jobs.par_iter()
        .map(|job| {
            let model = &models[job.model];
            let grid = &grids[job.level];
            let mut prev: Option<CqrFit> = None;
            let mut out = Vec::with_capacity(job.end - job.start);
            for i in job.start..job.end {
                let request = FitRequest {
                    options: *options,
                    warm_start: prev.as_ref(),
                    skip: Some(i),
                };
                let fit = fit_cqr_with(data, &model.columns, grid, request).map_err(|e| {
                    e.context(format!("model {} leaving out observation {}", model.id, i + 1))
                })?;
                let row = data.row(i);
                out.push(
                    (0..grid.len())
                        .map(|k| fit.predict_full_unchecked(row, k))
                        .collect(),
                );
                prev = Some(fit);
            }
            Ok(out)
        })
        .collect()
}
