//! The seven estimators compared throughout: fitting each one on a training
//! sample and packaging the result as an [`AveragedPredictor`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::averaging::AveragedPredictor;
use crate::cqr::CqrFit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::lp::LpOptions;
use crate::models::{
    fit_all_per_quantile, fit_all_with, jackknife_tensor_with, CandidateModel, LooPredictionTensor,
    TensorMode,
};
use crate::weighting::{
    information_criteria, select_model, select_weights_mcv0, select_weights_mcvc, CriterionTable,
    IcResiduals, SelectionRule, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Jackknife averaging with one weight vector for the composite loss.
    Mcvc,
    /// Jackknife averaging of single-level fits, one weight vector per level.
    Mcv0,
    /// Model with the smallest leave-one-out composite loss.
    Cvc,
    Aicc,
    Sicc,
    /// Smoothed AIC_c weights.
    Saicc,
    /// Smoothed SIC_c weights.
    Ssicc,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Mcvc,
        Method::Mcv0,
        Method::Cvc,
        Method::Aicc,
        Method::Sicc,
        Method::Saicc,
        Method::Ssicc,
    ];

    /// Lowercase name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Method::Mcvc => "mcvc",
            Method::Mcv0 => "mcv0",
            Method::Cvc => "cvc",
            Method::Aicc => "aicc",
            Method::Sicc => "sicc",
            Method::Saicc => "saicc",
            Method::Ssicc => "ssicc",
        }
    }

    /// Display label for plots.
    pub fn label(self) -> &'static str {
        match self {
            Method::Mcvc => "MCV_c",
            Method::Mcv0 => "MCV_0",
            Method::Cvc => "CV_c",
            Method::Aicc => "AIC_c",
            Method::Sicc => "SIC_c",
            Method::Saicc => "SAIC_c",
            Method::Ssicc => "SSIC_c",
        }
    }

    /// Parses a comma-separated list, keeping the order given and dropping
    /// repeats.
    pub fn parse_list(text: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = Vec::new();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::domain("method list is empty"));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('_', "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| {
                Error::domain(format!(
                    "unknown method '{s}' (expected one of mcvc, mcv0, cvc, aicc, sicc, saicc, ssicc)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOptions {
    pub lp: LpOptions,
    /// Residuals inside the AIC_c / SIC_c logarithm.
    pub ic_residuals: IcResiduals,
    /// `PerQuantile` (leave-one-out refits) or `PerQuantileFullSample`.
    pub mcv0_mode: TensorMode,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            lp: LpOptions::default(),
            ic_residuals: IcResiduals::LeaveOneOut,
            mcv0_mode: TensorMode::PerQuantile,
        }
    }
}

/// One fitted method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    pub predictor: AveragedPredictor,
    /// Id of the chosen model for the selection methods.
    pub selected: Option<usize>,
}

/// Everything computed while fitting a set of methods on one training sample.
#[derive(Debug, Clone)]
pub struct FittedMethods {
    pub fits: Vec<MethodFit>,
    pub composite_tensor: Option<LooPredictionTensor>,
    pub per_level_tensor: Option<LooPredictionTensor>,
    pub criteria: Option<CriterionTable>,
}

impl FittedMethods {
    pub fn get(&self, method: Method) -> Option<&MethodFit> {
        self.fits.iter().find(|f| f.method == method)
    }
}

/// Fits `methods` on `train` over the candidate `models`. Only the tensors
/// and fits the requested methods need are computed.
pub fn fit_methods(
    train: &Dataset,
    models: &[CandidateModel],
    grid: &QuantileGrid,
    methods: &[Method],
    options: &MethodOptions,
) -> Result<FittedMethods> {
    if models.is_empty() {
        return Err(Error::domain("need at least one candidate model"));
    }
    if methods.is_empty() {
        return Err(Error::domain("need at least one method"));
    }
    if !matches!(options.mcv0_mode, TensorMode::PerQuantile | TensorMode::PerQuantileFullSample) {
        return Err(Error::domain("per-level weights need a per-quantile tensor mode"));
    }
    let mm = models.len();
    let y = train.y();
    let needs_composite = methods.iter().any(|&m| m != Method::Mcv0);
    let needs_criteria = methods
        .iter()
        .any(|m| matches!(m, Method::Cvc | Method::Aicc | Method::Sicc | Method::Saicc | Method::Ssicc));

    let (full, tensor, criteria) = if needs_composite {
        let full = fit_all_with(train, models, grid, &options.lp)?;
        let tensor = jackknife_tensor_with(train, models, grid, TensorMode::Composite, &options.lp)?;
        let criteria = if needs_criteria {
            Some(information_criteria(models, &full, &tensor, y, grid, options.ic_residuals)?)
        } else {
            None
        };
        (Some(full), Some(tensor), criteria)
    } else {
        (None, None, None)
    };

    let (level_fits, level_tensor) = if methods.contains(&Method::Mcv0) {
        let fits = fit_all_per_quantile(train, models, grid, &options.lp)?;
        let tensor = jackknife_tensor_with(train, models, grid, options.mcv0_mode, &options.lp)?;
        (Some(fits), Some(tensor))
    } else {
        (None, None)
    };

    let index_of = |id: usize| -> Result<usize> {
        models
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| Error::domain(format!("selected model {id} not in the candidate set")))
    };
    let composite = |w: WeightVector| -> Result<AveragedPredictor> {
        let fits: Vec<CqrFit> = full.clone().expect("composite fits computed");
        AveragedPredictor::composite(fits, w, grid)
    };

    let mut fits = Vec::with_capacity(methods.len());
    for &method in methods {
        let (predictor, selected) = match method {
            Method::Mcvc => {
                let t = tensor.as_ref().expect("composite tensor computed");
                (composite(select_weights_mcvc(t, y, grid)?)?, None)
            }
            Method::Mcv0 => {
                let t = level_tensor.as_ref().expect("per-level tensor computed");
                let ws = select_weights_mcv0(t, y, grid)?;
                let lf = level_fits.clone().expect("per-level fits computed");
                (AveragedPredictor::per_level(lf, ws, grid)?, None)
            }
            Method::Cvc | Method::Aicc | Method::Sicc => {
                let table = criteria.as_ref().expect("criteria computed");
                let rule = match method {
                    Method::Cvc => SelectionRule::Cv,
                    Method::Aicc => SelectionRule::Aic,
                    _ => SelectionRule::Sic,
                };
                let id = select_model(table, rule)?;
                (composite(WeightVector::vertex(index_of(id)?, mm)?)?, Some(id))
            }
            Method::Saicc => {
                let table = criteria.as_ref().expect("criteria computed");
                (composite(table.aic_weights.clone())?, None)
            }
            Method::Ssicc => {
                let table = criteria.as_ref().expect("criteria computed");
                (composite(table.sic_weights.clone())?, None)
            }
        };
        fits.push(MethodFit {
            method,
            predictor,
            selected,
        });
    }
    Ok(FittedMethods {
        fits,
        composite_tensor: tensor,
        per_level_tensor: level_tensor,
        criteria,
    })
}
