//! Simulation designs, signal-strength calibration and the replication driver.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::averaging::{prediction_error, EvaluationReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::QuantileGrid;
use crate::methods::{fit_methods, Method, MethodOptions};
use crate::models::{build_nested_models, explicit_models, CandidateModel, ColumnOrdering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    /// `y = nu sum_{j<=1000} x_j / j + e`, standard normal covariates.
    One,
    /// `y = nu sum_{j<=30} x_j / j + e`, chi-square(1) covariates.
    Two,
    /// `y = nu sum_{j<=25} Phi(x_j) / j + e`, standard normal covariates.
    Three,
    /// `y = nu x'(1, 0, 0.5, -0.1) + e`, four standard normal covariates.
    Four,
}

impl Setting {
    pub fn number(self) -> u8 {
        match self {
            Setting::One => 1,
            Setting::Two => 2,
            Setting::Three => 3,
            Setting::Four => 4,
        }
    }

    /// Covariates entering the signal.
    pub fn signal_terms(self) -> usize {
        match self {
            Setting::One => 1000,
            Setting::Two => 30,
            Setting::Three => 25,
            Setting::Four => 4,
        }
    }

    pub fn default_grid(self) -> QuantileGrid {
        match self {
            Setting::Four => QuantileGrid::equispaced(5),
            _ => QuantileGrid::new(vec![0.05, 0.5, 0.95]),
        }
        .expect("built-in grids are valid")
    }

    /// `floor(3 n^(1/3))` for Setting 1, 20 for Settings 2-3, 8 for Setting 4.
    pub fn default_models(self, n: usize) -> usize {
        match self {
            Setting::One => {
                // largest m with m^3 <= 27 n, exact in integers
                let target = 27 * n as u128;
                let mut m = 0u128;
                while (m + 1).pow(3) <= target {
                    m += 1;
                }
                m as usize
            }
            Setting::Two | Setting::Three => 20,
            Setting::Four => 8,
        }
    }

    pub fn schemes(self) -> &'static [ErrorScheme] {
        match self {
            Setting::Four => &[ErrorScheme::Case1, ErrorScheme::Case2, ErrorScheme::Case3],
            _ => &[ErrorScheme::Homoscedastic, ErrorScheme::Heteroscedastic],
        }
    }

    /// Variance of the unscaled signal.
    pub fn signal_variance(self) -> f64 {
        let inv_sq = |m: usize| (1..=m).map(|j| 1.0 / (j * j) as f64).sum::<f64>();
        match self {
            Setting::One => inv_sq(1000),
            Setting::Two => 2.0 * inv_sq(30),
            Setting::Three => inv_sq(25) / 12.0,
            Setting::Four => 1.0 + 0.25 + 0.01,
        }
    }
}

impl TryFrom<u8> for Setting {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            3 => Ok(Setting::Three),
            4 => Ok(Setting::Four),
            _ => Err(Error::domain(format!("unknown setting {v} (expected 1-4)"))),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        s.number()
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorScheme {
    Homoscedastic,
    Heteroscedastic,
    /// Normal with variance 0.5.
    Case1,
    /// Chi-square with one degree of freedom (not centred).
    Case2,
    /// Equal mixture of N(0, 1) and N(0, 0.5).
    Case3,
}

impl ErrorScheme {
    pub fn name(self) -> &'static str {
        match self {
            ErrorScheme::Homoscedastic => "homoscedastic",
            ErrorScheme::Heteroscedastic => "heteroscedastic",
            ErrorScheme::Case1 => "case1",
            ErrorScheme::Case2 => "case2",
            ErrorScheme::Case3 => "case3",
        }
    }

    fn code(self) -> u64 {
        match self {
            ErrorScheme::Homoscedastic => 0,
            ErrorScheme::Heteroscedastic => 1,
            ErrorScheme::Case1 => 2,
            ErrorScheme::Case2 => 3,
            ErrorScheme::Case3 => 4,
        }
    }
}

impl fmt::Display for ErrorScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "homoscedastic" | "homo" => Ok(ErrorScheme::Homoscedastic),
            "heteroscedastic" | "hetero" => Ok(ErrorScheme::Heteroscedastic),
            "case1" | "1" => Ok(ErrorScheme::Case1),
            "case2" | "2" => Ok(ErrorScheme::Case2),
            "case3" | "3" => Ok(ErrorScheme::Case3),
            other => Err(Error::domain(format!("unknown error scheme '{other}'"))),
        }
    }
}

pub fn check_design(setting: Setting, scheme: ErrorScheme) -> Result<()> {
    if setting.schemes().contains(&scheme) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "error scheme {scheme} is not defined for setting {setting}"
        )))
    }
}

/// `Var(e)`. Closed form for the homoscedastic and Setting 4 laws; Monte
/// Carlo (10^6 draws, fixed seed, computed once) for heteroscedastic ones.
pub fn noise_variance(setting: Setting, scheme: ErrorScheme) -> Result<f64> {
    check_design(setting, scheme)?;
    Ok(match scheme {
        ErrorScheme::Homoscedastic => 1.0,
        ErrorScheme::Case1 => 0.5,
        ErrorScheme::Case2 => 2.0,
        ErrorScheme::Case3 => 0.75,
        ErrorScheme::Heteroscedastic => {
            static CACHE: [OnceLock<f64>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
            let slot = setting.number() as usize - 1;
            *CACHE[slot].get_or_init(|| monte_carlo_noise_variance(setting, 1_000_000))
        }
    })
}

const CALIBRATION_SEED: u64 = 0x6361_6c69_6272_6174;

fn monte_carlo_noise_variance(setting: Setting, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED ^ setting.number() as u64);
    let needed = heteroscedastic_terms(setting);
    let mut x = vec![0.0; needed];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        for v in x.iter_mut() {
            *v = draw_covariate(setting, &mut rng);
        }
        let e = heteroscedastic_noise(setting, &x, rng.sample(StandardNormal), &mut rng);
        sum += e;
        sum_sq += e * e;
    }
    let mean = sum / draws as f64;
    sum_sq / draws as f64 - mean * mean
}

/// `nu = sqrt(R^2 Var(e) / (S (1 - R^2)))`.
pub fn calibrate_nu(setting: Setting, scheme: ErrorScheme, r2: f64) -> Result<f64> {
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::domain(format!("target R^2 {r2} outside (0, 1)")));
    }
    let var_e = noise_variance(setting, scheme)?;
    Ok((r2 * var_e / (setting.signal_variance() * (1.0 - r2))).sqrt())
}

fn heteroscedastic_terms(setting: Setting) -> usize {
    match setting {
        Setting::One => 6,
        Setting::Two => 30,
        Setting::Three => 11,
        Setting::Four => 0,
    }
}

fn draw_covariate<R: Rng>(setting: Setting, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match setting {
        Setting::Two => z * z,
        _ => z,
    }
}

/// Heteroscedastic error from the leading covariates and a base draw
/// (standard normal, or standardized chi-square(3) in Setting 2).
fn heteroscedastic_noise<R: Rng>(setting: Setting, x: &[f64], z: f64, rng: &mut R) -> f64 {
    match setting {
        Setting::One => x[..6].iter().map(|v| v * v).sum::<f64>() * z,
        Setting::Two => {
            let scale: f64 = x[..30].iter().enumerate().map(|(j, v)| v / (j + 1) as f64).sum();
            scale * standardized_chi2_3(z, rng)
        }
        Setting::Three => (0.01 + x[..11].iter().map(|v| v * v).sum::<f64>()) * z,
        Setting::Four => unreachable!("setting 4 has no heteroscedastic scheme"),
    }
}

/// `(chi2(3) - 3) / sqrt(6)`, using `z` as the first of the three normals.
fn standardized_chi2_3<R: Rng>(z: f64, rng: &mut R) -> f64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    (z * z + a * a + b * b - 3.0) / 6f64.sqrt()
}

fn homoscedastic_noise<R: Rng>(setting: Setting, scheme: ErrorScheme, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match scheme {
        ErrorScheme::Homoscedastic if setting == Setting::Two => standardized_chi2_3(z, rng),
        ErrorScheme::Homoscedastic => z,
        ErrorScheme::Case1 => z * 0.5f64.sqrt(),
        ErrorScheme::Case2 => z * z,
        ErrorScheme::Case3 => {
            if rng.random::<bool>() {
                z
            } else {
                z * 0.5f64.sqrt()
            }
        }
        ErrorScheme::Heteroscedastic => unreachable!("handled by heteroscedastic_noise"),
    }
}

/// One draw of `n` observations with the covariates that are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpDraw {
    pub data: Dataset,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Draws `n` observations, keeping the first `stored` covariates.
pub fn draw<R: Rng>(
    setting: Setting,
    scheme: ErrorScheme,
    nu: f64,
    n: usize,
    stored: usize,
    rng: &mut R,
) -> Result<DgpDraw> {
    check_design(setting, scheme)?;
    let terms = setting.signal_terms();
    if stored > terms {
        return Err(Error::domain(format!(
            "setting {setting} has {terms} covariates, {stored} requested"
        )));
    }
    let coef = coefficients(setting);
    let phi = Normal::standard();
    let mut xs = vec![0.0; terms];
    let mut x = Vec::with_capacity(n * stored);
    let mut y = Vec::with_capacity(n);
    let mut signal = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        for v in xs.iter_mut() {
            *v = draw_covariate(setting, rng);
        }
        let s: f64 = match setting {
            Setting::Three => xs.iter().zip(&coef).map(|(v, c)| c * phi.cdf(*v)).sum(),
            _ => xs.iter().zip(&coef).map(|(v, c)| c * v).sum(),
        };
        let e = if scheme == ErrorScheme::Heteroscedastic {
            let z: f64 = rng.sample(StandardNormal);
            heteroscedastic_noise(setting, &xs, z, rng)
        } else {
            homoscedastic_noise(setting, scheme, rng)
        };
        x.extend_from_slice(&xs[..stored]);
        signal.push(nu * s);
        noise.push(e);
        y.push(nu * s + e);
    }
    let names = (1..=stored).map(|j| format!("x{j}")).collect();
    Ok(DgpDraw {
        data: Dataset::new(y, x, names)?,
        signal,
        noise,
    })
}

/// Unscaled signal coefficients.
pub fn coefficients(setting: Setting) -> Vec<f64> {
    match setting {
        Setting::Four => vec![1.0, 0.0, 0.5, -0.1],
        s => (1..=s.signal_terms()).map(|j| 1.0 / j as f64).collect(),
    }
}

/// The eight Setting 4 candidates: `x1` plus each subset of `{x2, x3, x4}`,
/// by size then lexicographically.
pub fn setting4_model_columns() -> Vec<Vec<usize>> {
    vec![
        vec![0],
        vec![0, 1],
        vec![0, 2],
        vec![0, 3],
        vec![0, 1, 2],
        vec![0, 1, 3],
        vec![0, 2, 3],
        vec![0, 1, 2, 3],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub scheme: ErrorScheme,
    pub n: usize,
    /// Candidate count; `None` uses the setting's rule.
    pub models: Option<usize>,
    /// `None` uses the setting's grid.
    pub grid: Option<QuantileGrid>,
    pub r2: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl SimulationConfig {
    pub fn new(setting: Setting, scheme: ErrorScheme, n: usize) -> Self {
        Self {
            setting,
            scheme,
            n,
            models: None,
            grid: None,
            r2: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            replications: 200,
            seed: 1,
            methods: Method::ALL.to_vec(),
        }
    }

    pub fn grid(&self) -> QuantileGrid {
        self.grid.clone().unwrap_or_else(|| self.setting.default_grid())
    }

    pub fn model_count(&self) -> usize {
        self.models.unwrap_or_else(|| self.setting.default_models(self.n))
    }

    /// Covariates kept in the generated datasets.
    pub fn stored_columns(&self) -> usize {
        match self.setting {
            Setting::One => self.model_count(),
            s => s.signal_terms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_design(self.setting, self.scheme)?;
        if self.n == 0 {
            return Err(Error::domain("sample size must be positive"));
        }
        if self.replications == 0 {
            return Err(Error::domain("replication count must be positive"));
        }
        if self.r2.is_empty() {
            return Err(Error::domain("no R^2 targets"));
        }
        if let Some(bad) = self.r2.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::domain(format!("target R^2 {bad} outside (0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(Error::domain("no methods requested"));
        }
        let m = self.model_count();
        let limit = match self.setting {
            Setting::Four => 8,
            s => s.signal_terms(),
        };
        if m == 0 || m > limit {
            return Err(Error::domain(format!(
                "setting {} supports 1 to {limit} candidate models, {m} requested",
                self.setting
            )));
        }
        Ok(())
    }

    pub fn candidate_models(&self, train: &Dataset) -> Result<Vec<CandidateModel>> {
        match self.setting {
            Setting::Four => {
                let mut lists = setting4_model_columns();
                lists.truncate(self.model_count());
                explicit_models(train, lists)
            }
            _ => build_nested_models(train, self.model_count(), ColumnOrdering::Given),
        }
    }
}

/// Training and evaluation samples of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSample {
    pub train: Dataset,
    pub eval: Dataset,
    pub train_noise: Vec<f64>,
    pub eval_noise: Vec<f64>,
    pub nu: f64,
    /// Scaled signal coefficients `nu * beta`.
    pub coefficients: Vec<f64>,
    /// Seed of the training stream; the evaluation stream is keyed separately.
    pub seed: u64,
}

const ROLE_TRAIN: u64 = 1;
const ROLE_EVAL: u64 = 2;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for `(base seed, setting, scheme, R^2, replication, role)`.
pub fn stream_seed(config: &SimulationConfig, r2: f64, replication: usize, role: u64) -> u64 {
    [
        config.setting.number() as u64,
        config.scheme.code(),
        config.n as u64,
        r2.to_bits(),
        replication as u64,
        role,
    ]
    .into_iter()
    .fold(splitmix(config.seed), |acc, v| splitmix(acc ^ v))
}

/// Replication `replication` at target `r2`; deterministic in the config's
/// seed and independent of every other replication.
pub fn generate(config: &SimulationConfig, r2: f64, replication: usize) -> Result<DgpSample> {
    config.validate()?;
    let nu = calibrate_nu(config.setting, config.scheme, r2)?;
    let stored = config.stored_columns();
    let seed = stream_seed(config, r2, replication, ROLE_TRAIN);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = draw(config.setting, config.scheme, nu, config.n, stored, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config, r2, replication, ROLE_EVAL));
    let eval = draw(config.setting, config.scheme, nu, config.n, stored, &mut rng)?;
    Ok(DgpSample {
        train: train.data,
        eval: eval.data,
        train_noise: train.noise,
        eval_noise: eval.noise,
        nu,
        coefficients: coefficients(config.setting).into_iter().map(|c| nu * c).collect(),
        seed,
    })
}

/// Holdout prediction error of every configured method in one replication.
pub fn run_replication(
    config: &SimulationConfig,
    r2: f64,
    replication: usize,
    options: &MethodOptions,
) -> Result<Vec<f64>> {
    let sample = generate(config, r2, replication)?;
    let grid = config.grid();
    let models = config.candidate_models(&sample.train)?;
    let fitted = fit_methods(&sample.train, &models, &grid, &config.methods, options)?;
    fitted
        .fits
        .iter()
        .map(|f| prediction_error(&f.predictor, &sample.eval, &grid))
        .collect()
}

/// CPE of every method at every R^2 target. Replications run in parallel;
/// any failure aborts the study with its R^2 and replication attached.
pub fn run_study(config: &SimulationConfig) -> Result<EvaluationReport> {
    run_study_with(config, &MethodOptions::default())
}

pub fn run_study_with(config: &SimulationConfig, options: &MethodOptions) -> Result<EvaluationReport> {
    config.validate()?;
    let mut report = EvaluationReport::new(
        "r2",
        vec![
            ("setting".into(), config.setting.to_string()),
            ("scheme".into(), config.scheme.to_string()),
            ("n".into(), config.n.to_string()),
            ("models".into(), config.model_count().to_string()),
        ],
    );
    for &r2 in &config.r2 {
        let per_rep: Vec<Vec<f64>> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                run_replication(config, r2, r, options)
                    .map_err(|e| e.context(format!("R^2 {r2}, replication {}", r + 1)))
            })
            .collect::<Result<_>>()?;
        for (j, &method) in config.methods.iter().enumerate() {
            report.push(r2, method, per_rep.iter().map(|pe| pe[j]).collect())?;
        }
    }
    Ok(report)
}
