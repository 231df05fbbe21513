#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use cqr_jma::methods::{fit_methods, Method, MethodOptions};
use cqr_jma::models::{build_nested_models, ColumnOrdering, LooPredictionTensor, TensorMode};
use cqr_jma::weighting::*;
use cqr_jma::{Dataset, QuantileGrid};
use proptest::prelude::*;
use rand::Rng;

/// Random `preds[i][k][m]` around `y` and the matching tensor.
fn random_tensor(seed: u64, n: usize, k: usize, m: usize, mode: TensorMode) -> (Vec<Vec<Vec<f64>>>, Vec<f64>, LooPredictionTensor) {
    let mut r = rng(seed);
    let y: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let preds: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| {
            (0..k)
                .map(|kk| (0..m).map(|j| y[i] + 0.3 * (kk as f64 - 1.0) + (0.4 + 0.3 * j as f64) * normal(&mut r)).collect())
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * k * m];
    for i in 0..n {
        for kk in 0..k {
            for j in 0..m {
                values[(kk * n + i) * m + j] = preds[i][kk][j];
            }
        }
    }
    let t = LooPredictionTensor::from_values(n, k, m, values, mode).unwrap();
    (preds, y, t)
}

fn taus(k: usize) -> Vec<f64> {
    (1..=k).map(|j| j as f64 / (k + 1) as f64).collect()
}

#[test]
fn criterion_matches_direct_double_sum() {
    let (preds, y, t) = random_tensor(41, 12, 3, 4, TensorMode::Composite);
    let grid = QuantileGrid::new(taus(3)).unwrap();
    let mut r = rng(42);
    for _ in 0..10 {
        let raw: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let ours = cv_criterion(&t, &y, &grid, &WeightVector::new(w.clone()).unwrap()).unwrap();
        let direct = averaged_loss(&preds, &y, &taus(3), &w);
        assert!((ours - direct).abs() <= 1e-12 * (1.0 + direct));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn criterion_convex_in_weights(seed in 0u64..10_000, a in 0.0f64..=1.0, lam in 0.0f64..=1.0) {
        let (_, y, t) = random_tensor(seed, 8, 2, 3, TensorMode::Composite);
        let grid = QuantileGrid::new(taus(2)).unwrap();
        let w1 = WeightVector::new(vec![a, 1.0 - a, 0.0]).unwrap();
        let w2 = WeightVector::new(vec![0.0, 1.0 - a, a]).unwrap();
        let mix: Vec<f64> = w1.as_slice().iter().zip(w2.as_slice()).map(|(u, v)| lam * u + (1.0 - lam) * v).collect();
        let f = |w: &WeightVector| cv_criterion(&t, &y, &grid, w).unwrap();
        let lhs = f(&WeightVector::new(mix).unwrap());
        prop_assert!(lhs <= lam * f(&w1) + (1.0 - lam) * f(&w2) + 1e-12);
    }

    #[test]
    fn smoothed_weights_shift_invariant(scores in proptest::collection::vec(-50.0f64..50.0, 1..8), shift in -1e3f64..1e3) {
        let a = smoothed_weights(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = smoothed_weights(&shifted).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn sic_minus_aic_identity(
        losses in proptest::collection::vec(1e-3f64..10.0, 1..6),
        n in 5usize..500,
        k in 1usize..10,
    ) {
        let mm = losses.len();
        let ids: Vec<usize> = (1..=mm).collect();
        let sizes: Vec<usize> = (1..=mm).collect();
        let t = CriterionTable::from_losses(&ids, &sizes, &losses, &losses, n, k).unwrap();
        let nk = (n * k) as f64;
        for e in &t.entries {
            let dof = (e.size + k) as f64;
            prop_assert!((e.sic - e.aic - dof * (nk.ln() - 2.0)).abs() <= 1e-9 * (1.0 + e.aic.abs()));
            prop_assert!((e.aic - (2.0 * nk * e.ic_loss.ln() + 2.0 * dof)).abs() <= 1e-9 * (1.0 + e.aic.abs()));
        }
    }
}

#[test]
fn mcvc_never_worse_than_a_single_model() {
    for seed in 0..20 {
        let (_, y, t) = random_tensor(100 + seed, 15, 3, 5, TensorMode::Composite);
        let grid = QuantileGrid::new(taus(3)).unwrap();
        let w = select_weights_mcvc(&t, &y, &grid).unwrap();
        let best = cv_criterion(&t, &y, &grid, &w).unwrap();
        for s in single_model_losses(&t, &y, &grid).unwrap() {
            assert!(best <= s + 1e-10);
        }
    }
}

#[test]
fn mcvc_beats_simplex_grid() {
    for seed in 0..10 {
        let m = 2 + (seed as usize % 3);
        let (preds, y, t) = random_tensor(200 + seed, 10, 2, m, TensorMode::Composite);
        let grid = QuantileGrid::new(taus(2)).unwrap();
        let w = select_weights_mcvc(&t, &y, &grid).unwrap();
        let ours = cv_criterion(&t, &y, &grid, &w).unwrap();
        let (g, _) = grid_minimum(&preds, &y, &taus(2), 100);
        assert!(ours <= g + 1e-8, "seed {seed}: {ours} > {g}");
    }
}

#[test]
fn mcv0_each_level_beats_its_grid() {
    let (preds, y, t) = random_tensor(300, 12, 3, 3, TensorMode::PerQuantile);
    let grid = QuantileGrid::new(taus(3)).unwrap();
    let ws = select_weights_mcv0(&t, &y, &grid).unwrap();
    assert_eq!(ws.len(), 3);
    for (k, w) in ws.iter().enumerate() {
        let level: Vec<Vec<Vec<f64>>> = preds.iter().map(|p| vec![p[k].clone()]).collect();
        let tau = [taus(3)[k]];
        let ours = averaged_loss(&level, &y, &tau, w.as_slice());
        let (g, _) = grid_minimum(&level, &y, &tau, 200);
        assert!(ours <= g + 1e-8);
    }
}

#[test]
fn single_level_mcv0_equals_mcvc() {
    let (_, y, t) = random_tensor(301, 14, 1, 4, TensorMode::Composite);
    let grid = QuantileGrid::single(0.3).unwrap();
    let a = select_weights_mcvc(&t, &y, &grid).unwrap();
    let b = select_weights_mcv0(&t, &y, &grid).unwrap();
    assert_eq!(vec![a], b);
}

#[test]
fn per_level_criterion_separates() {
    // the per-level optimum minimizes the sum of per-level losses over
    // all choices of one weight vector per level
    let (preds, y, t) = random_tensor(302, 10, 2, 3, TensorMode::PerQuantile);
    let grid = QuantileGrid::new(taus(2)).unwrap();
    let ws = select_weights_mcv0(&t, &y, &grid).unwrap();
    let total: f64 = (0..2)
        .map(|k| {
            let level: Vec<Vec<Vec<f64>>> = preds.iter().map(|p| vec![p[k].clone()]).collect();
            averaged_loss(&level, &y, &[taus(2)[k]], ws[k].as_slice())
        })
        .sum();
    let shared = select_weights_mcvc(&LooPredictionTensor::from_values(10, 2, 3, t.stacked_predictions().to_vec(), TensorMode::Composite).unwrap(), &y, &grid).unwrap();
    let shared_total = 2.0 * cv_criterion(&t, &y, &grid, &shared).unwrap();
    assert!(total <= shared_total + 1e-10);
}

#[test]
fn tensor_mode_is_enforced() {
    let (_, y, t) = random_tensor(303, 8, 2, 2, TensorMode::PerQuantile);
    let grid = QuantileGrid::new(taus(2)).unwrap();
    assert!(select_weights_mcvc(&t, &y, &grid).is_err());
    let (_, y, t) = random_tensor(304, 8, 2, 2, TensorMode::Composite);
    assert!(select_weights_mcv0(&t, &y, &grid).is_err());
    assert!(cv_criterion(&t, &y[..7], &grid, &WeightVector::uniform(2).unwrap()).is_err());
    assert!(cv_criterion(&t, &y, &grid, &WeightVector::uniform(3).unwrap()).is_err());
}

#[test]
fn single_candidate_methods_coincide() {
    let mut r = rng(305);
    let (x, y, _) = random_instance(&mut r, 30, 2, 1);
    let cols: Vec<Vec<f64>> = (0..2).map(|j| x.iter().map(|row| row[j]).collect()).collect();
    let d = Dataset::from_columns(y, &cols).unwrap();
    let models = build_nested_models(&d, 1, ColumnOrdering::Given).unwrap();
    // composite methods share the single composite fit
    let grid = QuantileGrid::equispaced(3).unwrap();
    let fm = fit_methods(&d, &models, &grid, &Method::ALL, &MethodOptions::default()).unwrap();
    let reference = &fm.get(Method::Mcvc).unwrap().predictor;
    for m in [Method::Cvc, Method::Aicc, Method::Sicc, Method::Saicc, Method::Ssicc] {
        assert_eq!(&fm.get(m).unwrap().predictor, reference, "{m}");
    }
    // with one level, MCV_0 joins them
    let grid = QuantileGrid::single(0.5).unwrap();
    let fm = fit_methods(&d, &models, &grid, &Method::ALL, &MethodOptions::default()).unwrap();
    let row = d.row(3);
    let reference = cqr_jma::averaging::predict_averaged(&fm.get(Method::Mcvc).unwrap().predictor, row, 0).unwrap();
    for f in &fm.fits {
        let v = cqr_jma::averaging::predict_averaged(&f.predictor, row, 0).unwrap();
        assert!((v - reference).abs() < 1e-9, "{}", f.method);
    }
}

#[test]
fn selection_prefers_smaller_models_on_ties() {
    let t = CriterionTable::from_losses(&[1, 2, 3], &[3, 1, 2], &[0.5, 0.5, 0.5], &[0.2, 0.2, 0.2], 10, 1).unwrap();
    assert_eq!(select_model(&t, SelectionRule::Cv).unwrap(), 2);
    assert_eq!(select_model(&t, SelectionRule::Aic).unwrap(), 2);
}
