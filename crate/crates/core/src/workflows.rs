//! Rolling one-step-ahead forecasting and repeated random-split evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{format_number, prediction_error, EvaluationReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{rho, QuantileGrid};
use crate::methods::{fit_methods, Method, MethodOptions};
use crate::models::{build_nested_models, correlation_order, CandidateModel};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorkflowOptions {
    pub methods: MethodOptions,
    /// Rank regressors once on the whole series instead of per window.
    pub sort_full_sample: bool,
}

/// Forecasts of every method from one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastOrigin {
    /// 0-based row being forecast.
    pub t: usize,
    pub y: f64,
    /// `predictions[j][k]` for method `j`, level `k`.
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecastResult {
    pub t1: usize,
    pub methods: Vec<Method>,
    pub grid: QuantileGrid,
    pub origins: Vec<ForecastOrigin>,
    /// Per method, `(1 / ((T - T1) K)) sum_t sum_k rho(y_t - yhat_tk)`.
    pub cpe: Vec<f64>,
}

impl RollingForecastResult {
    /// Per-origin composite losses of method `j`, averaged over levels.
    pub fn origin_losses(&self, j: usize) -> Vec<f64> {
        let kk = self.grid.len() as f64;
        self.origins
            .iter()
            .map(|o| {
                self.grid
                    .levels()
                    .iter()
                    .zip(&o.predictions[j])
                    .map(|(&tau, &p)| rho(o.y - p, tau))
                    .sum::<f64>()
                    / kk
            })
            .collect()
    }

    /// CPE recomputed from the stored predictions.
    pub fn recompute_cpe(&self) -> Vec<f64> {
        (0..self.methods.len())
            .map(|j| {
                let l = self.origin_losses(j);
                l.iter().sum::<f64>() / l.len() as f64
            })
            .collect()
    }

    /// Long-format predictions: `t, method, tau, y, prediction`.
    pub fn write_predictions<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t1", "t", "method", "tau", "y", "prediction"])?;
        for o in &self.origins {
            for (j, m) in self.methods.iter().enumerate() {
                for (k, &tau) in self.grid.levels().iter().enumerate() {
                    w.write_record([
                        self.t1.to_string(),
                        (o.t + 1).to_string(),
                        m.name().to_string(),
                        format_number(tau),
                        format_number(o.y),
                        format_number(o.predictions[j][k]),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn nested_from_order(order: &[usize], count: usize) -> Vec<CandidateModel> {
    (1..=count)
        .map(|m| CandidateModel {
            id: m,
            columns: order[..m].to_vec(),
        })
        .collect()
}

fn check_model_count(data: &Dataset, models: usize) -> Result<()> {
    if models == 0 || models > data.p() {
        return Err(Error::domain(format!(
            "{models} nested models requested, dataset has {} regressors",
            data.p()
        )));
    }
    Ok(())
}

/// Smallest training size the jackknife fits of `models` nested models need.
pub fn minimum_training_size(models: usize, grid: &QuantileGrid) -> usize {
    models + grid.len() + 2
}

/// For each origin `t = T1 .. T-1` (0-based), fits every method on rows
/// `t - T1 .. t - 1` and forecasts the quantiles of `y_t`.
pub fn rolling_forecast(
    data: &Dataset,
    t1: usize,
    methods: &[Method],
    grid: &QuantileGrid,
    models: usize,
    options: &WorkflowOptions,
) -> Result<RollingForecastResult> {
    let total = data.n();
    check_model_count(data, models)?;
    if t1 >= total {
        return Err(Error::domain(format!(
            "window length {t1} leaves nothing to forecast in a series of length {total}"
        )));
    }
    let needed = minimum_training_size(models, grid);
    if t1 < needed {
        return Err(Error::domain(format!(
            "window length {t1} too small for {models} models on {} levels (need {needed})",
            grid.len()
        )));
    }
    let full_order = options.sort_full_sample.then(|| correlation_order(data));
    let origins: Vec<ForecastOrigin> = (t1..total)
        .into_par_iter()
        .map(|t| {
            let window: Vec<usize> = (t - t1..t).collect();
            let train = data.select_rows(&window)?;
            let order = match &full_order {
                Some(o) => o.clone(),
                None => correlation_order(&train),
            };
            let candidates = nested_from_order(&order, models);
            let fitted = fit_methods(&train, &candidates, grid, methods, &options.methods)
                .map_err(|e| e.context(format!("forecast origin {}", t + 1)))?;
            let row = data.row(t);
            let predictions = fitted
                .fits
                .iter()
                .map(|f| {
                    (0..grid.len())
                        .map(|k| crate::averaging::predict_averaged(&f.predictor, row, k))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ForecastOrigin {
                t,
                y: data.y()[t],
                predictions,
            })
        })
        .collect::<Result<_>>()?;
    let mut result = RollingForecastResult {
        t1,
        methods: methods.to_vec(),
        grid: grid.clone(),
        origins,
        cpe: Vec::new(),
    };
    result.cpe = result.recompute_cpe();
    Ok(result)
}

/// Rolling forecasts for several window lengths, as one report along `t1`.
pub fn rolling_report(results: &[RollingForecastResult]) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("t1", Vec::new());
    for r in results {
        for (j, &m) in r.methods.iter().enumerate() {
            report.push(r.t1 as f64, m, r.origin_losses(j))?;
        }
    }
    Ok(report)
}

/// Training rows of split `split` for training size `n1`, in ascending order.
pub fn split_indices(n: usize, n1: usize, seed: u64, split: usize) -> Vec<usize> {
    let key = seed
        ^ (n1 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (split as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut train = idx[..n1].to_vec();
    train.sort_unstable();
    train
}

/// `splits` random partitions into `n1` training rows and the rest; on each,
/// regressors are ranked on the training part, `models` nested models are
/// fitted and every method is scored on the held-out rows.
#[allow(clippy::too_many_arguments)]
pub fn split_evaluation(
    data: &Dataset,
    n1: usize,
    splits: usize,
    methods: &[Method],
    grid: &QuantileGrid,
    models: usize,
    seed: u64,
    options: &WorkflowOptions,
) -> Result<EvaluationReport> {
    let n = data.n();
    check_model_count(data, models)?;
    if n1 == 0 || n1 >= n {
        return Err(Error::domain(format!(
            "training size {n1} must lie strictly between 0 and {n}"
        )));
    }
    if splits == 0 {
        return Err(Error::domain("split count must be positive"));
    }
    let needed = minimum_training_size(models, grid);
    if n1 < needed {
        return Err(Error::domain(format!(
            "training size {n1} too small for {models} models on {} levels (need {needed})",
            grid.len()
        )));
    }
    let per_split: Vec<Vec<f64>> = (0..splits)
        .into_par_iter()
        .map(|s| {
            let train_idx = split_indices(n, n1, seed, s);
            let mut in_train = vec![false; n];
            train_idx.iter().for_each(|&i| in_train[i] = true);
            let eval_idx: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
            let train = data.select_rows(&train_idx)?;
            let eval = data.select_rows(&eval_idx)?;
            let candidates = build_nested_models(&train, models, crate::models::ColumnOrdering::CorrelationSorted)?;
            let fitted = fit_methods(&train, &candidates, grid, methods, &options.methods)
                .map_err(|e| e.context(format!("split {}", s + 1)))?;
            fitted
                .fits
                .iter()
                .map(|f| prediction_error(&f.predictor, &eval, grid))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut report = EvaluationReport::new(
        "n1",
        vec![("splits".into(), splits.to_string()), ("models".into(), models.to_string())],
    );
    for (j, &m) in methods.iter().enumerate() {
        report.push(n1 as f64, m, per_split.iter().map(|pe| pe[j]).collect())?;
    }
    Ok(report)
}
