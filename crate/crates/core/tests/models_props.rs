#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use cqr_jma::lp::LpOptions;
use cqr_jma::models::*;
use cqr_jma::sim::{generate, ErrorScheme, Setting, SimulationConfig};
use cqr_jma::{Dataset, QuantileGrid};

fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut r = rng(seed);
    let (x, y, _) = random_instance(&mut r, n, p, 1);
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|row| row[j]).collect()).collect();
    Dataset::from_columns(y, &cols).unwrap()
}

#[test]
fn perfect_predictor_ranked_first() {
    let mut r = rng(31);
    let n = 40;
    let noise: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
    let target: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let constant = vec![2.0; n];
    let cols = vec![noise[0].clone(), noise[1].clone(), target.clone(), constant, noise[2].clone()];
    let d = Dataset::from_columns(target.clone(), &cols).unwrap();
    // correlations computed directly
    let corr = |a: &[f64]| {
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = target.iter().sum::<f64>() / n as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&target) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        if saa == 0.0 { 0.0 } else { (sab / (saa * sbb).sqrt()).abs() }
    };
    let mut expected: Vec<usize> = (0..5).collect();
    expected.sort_by(|&a, &b| corr(&cols[b]).total_cmp(&corr(&cols[a])));
    assert_eq!(correlation_order(&d), expected);
    assert_eq!(expected[0], 2);
    assert_eq!(*expected.last().unwrap(), 3);
    let models = build_nested_models(&d, 5, ColumnOrdering::CorrelationSorted).unwrap();
    assert_eq!(models[0].columns, vec![2]);
}

#[test]
fn nested_objectives_decrease() {
    let d = random_data(32, 60, 5);
    let grid = QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
    let models = build_nested_models(&d, 5, ColumnOrdering::Given).unwrap();
    let fits = fit_all(&d, &models, &grid).unwrap();
    for w in fits.windows(2) {
        assert!(w[1].objective <= w[0].objective * (1.0 + 1e-9));
    }
}

#[test]
fn identical_models_identical_fits() {
    let d = random_data(33, 30, 2);
    let grid = QuantileGrid::equispaced(3).unwrap();
    let models = explicit_models(&d, vec![vec![0, 1], vec![0, 1]]).unwrap();
    let fits = fit_all(&d, &models, &grid).unwrap();
    assert_eq!(fits[0], fits[1]);
}

#[test]
fn full_model_has_smallest_objective_in_setting4() {
    let cfg = SimulationConfig::new(Setting::Four, ErrorScheme::Case1, 200);
    let sample = generate(&cfg, 0.5, 0).unwrap();
    let models = cfg.candidate_models(&sample.train).unwrap();
    let fits = fit_all(&sample.train, &models, &cfg.grid()).unwrap();
    let last = fits.last().unwrap().objective;
    assert!(fits.iter().all(|f| last <= f.objective * (1.0 + 1e-9)));
}

#[test]
fn poisoned_observation_never_seen_by_its_own_fit() {
    // tau (n - 1) non-integer keeps every leave-one-out optimum unique
    let d = random_data(34, 25, 3);
    let grid = QuantileGrid::new(vec![0.23, 0.51, 0.77]).unwrap();
    let models = build_nested_models(&d, 3, ColumnOrdering::Given).unwrap();
    for mode in [TensorMode::Composite, TensorMode::PerQuantile] {
        let base = jackknife_tensor(&d, &models, &grid, mode).unwrap();
        for i in [0, 7, 24] {
            let mut y = d.y().to_vec();
            y[i] += 1e6;
            let poisoned = jackknife_tensor(&d.with_response(y).unwrap(), &models, &grid, mode).unwrap();
            for k in 0..3 {
                for m in 0..3 {
                    let (a, b) = (base.get(i, k, m), poisoned.get(i, k, m));
                    assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{mode:?} i={i} k={k} m={m}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn row_permutation_equivariance() {
    let d = random_data(35, 20, 2);
    let grid = QuantileGrid::new(vec![0.3, 0.7]).unwrap();
    let models = build_nested_models(&d, 2, ColumnOrdering::Given).unwrap();
    let base = jackknife_tensor(&d, &models, &grid, TensorMode::Composite).unwrap();
    let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
    let shuffled = d.select_rows(&perm).unwrap();
    let t = jackknife_tensor(&shuffled, &models, &grid, TensorMode::Composite).unwrap();
    for (pos, &i) in perm.iter().enumerate() {
        for k in 0..2 {
            for m in 0..2 {
                assert!((t.get(pos, k, m) - base.get(i, k, m)).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn single_level_composite_equals_per_quantile() {
    let d = random_data(36, 30, 3);
    let grid = QuantileGrid::single(0.4).unwrap();
    let models = build_nested_models(&d, 3, ColumnOrdering::Given).unwrap();
    let a = jackknife_tensor(&d, &models, &grid, TensorMode::Composite).unwrap();
    let b = jackknife_tensor(&d, &models, &grid, TensorMode::PerQuantile).unwrap();
    assert_eq!(a.stacked_predictions(), b.stacked_predictions());
}

#[test]
fn warm_and_cold_tensors_agree() {
    let d = random_data(37, 30, 3);
    let grid = QuantileGrid::equispaced(3).unwrap();
    let models = build_nested_models(&d, 3, ColumnOrdering::Given).unwrap();
    let warm = jackknife_tensor(&d, &models, &grid, TensorMode::Composite).unwrap();
    // cold: refit each held-out row from scratch
    for i in 0..d.n() {
        let rows: Vec<usize> = (0..d.n()).filter(|&j| j != i).collect();
        let sub = d.select_rows(&rows).unwrap();
        for (m, model) in models.iter().enumerate() {
            let fit = cqr_jma::fit_cqr(&sub, &model.columns, &grid).unwrap();
            let cold_loss: f64 = fit.objective;
            // compare via objectives of the warm prediction's fit is not available, so
            // compare predictions at the held-out row; flat optima may differ slightly
            for k in 0..3 {
                let cold = fit.predict_row(d.row(i), k).unwrap();
                let w = warm.get(i, k, m);
                assert!((cold - w).abs() <= 1e-6 * (1.0 + cold.abs()) || cold_loss == 0.0, "i={i} m={m} k={k}: {w} vs {cold}");
            }
        }
    }
}

#[test]
fn tensor_is_deterministic() {
    let d = random_data(38, 40, 4);
    let grid = QuantileGrid::equispaced(3).unwrap();
    let models = build_nested_models(&d, 4, ColumnOrdering::Given).unwrap();
    let a = jackknife_tensor(&d, &models, &grid, TensorMode::Composite).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| jackknife_tensor(&d, &models, &grid, TensorMode::Composite).unwrap());
    assert_eq!(a, b);
}

#[test]
fn full_sample_mode_uses_full_fits() {
    let d = random_data(39, 20, 2);
    let grid = QuantileGrid::new(vec![0.25, 0.75]).unwrap();
    let models = build_nested_models(&d, 2, ColumnOrdering::Given).unwrap();
    let t = jackknife_tensor(&d, &models, &grid, TensorMode::PerQuantileFullSample).unwrap();
    let fits = fit_all_per_quantile(&d, &models, &grid, &LpOptions::default()).unwrap();
    for i in 0..20 {
        for k in 0..2 {
            for m in 0..2 {
                assert_eq!(t.get(i, k, m), fits[m][k].predict_row(d.row(i), 0).unwrap());
            }
        }
    }
}
