//! Independent oracles shared by the integration and acceptance suites.
//! Nothing here calls into the solver paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rho(e: f64, tau: f64) -> f64 {
    if e > 0.0 {
        tau * e
    } else {
        (tau - 1.0) * e
    }
}

/// Composite objective written out directly: `sum_k sum_i rho(y_i - b_k - x_i'beta)`.
pub fn composite_loss(x: &[Vec<f64>], y: &[f64], taus: &[f64], params: &[f64]) -> f64 {
    let kk = taus.len();
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let lin: f64 = x[i].iter().zip(&params[kk..]).map(|(a, b)| a * b).sum();
        for (k, &tau) in taus.iter().enumerate() {
            total += rho(yi - params[k] - lin, tau);
        }
    }
    total
}

/// Nelder-Mead with restarts from the incumbent.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], scale: f64, iters: usize) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for j in 0..d {
        let mut p = start.to_vec();
        p[j] += scale;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = (vals[d] - vals[0]).abs();
        let size: f64 = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread < 1e-15 && size < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[d]).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let xc = if fr < vals[d] { along(0.5) } else { along(-0.5) };
            let fc = f(&xc);
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                let best = pts[0].clone();
                for i in 1..=d {
                    pts[i] = best.iter().zip(&pts[i]).map(|(b, p)| b + 0.5 * (p - b)).collect();
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (pts[best].clone(), vals[best])
}

/// Multi-start Nelder-Mead, each start restarted from its incumbent with a
/// shrinking simplex until no further progress.
pub fn multistart_minimize<F: Fn(&[f64]) -> f64>(f: &F, dim: usize, spread: f64, starts: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut r = rng(seed);
    let mut best: (Vec<f64>, f64) = (vec![0.0; dim], f(&vec![0.0; dim]));
    for s in 0..starts {
        let mut x: Vec<f64> = if s == 0 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| r.random_range(-spread..spread)).collect()
        };
        let mut fx = f(&x);
        let mut scale = spread.max(1e-3);
        for _ in 0..60 {
            let (nx, nf) = nelder_mead(f, &x, scale, 4000);
            let improved = nf < fx - 1e-15 * (1.0 + fx.abs());
            if nf <= fx {
                x = nx;
                fx = nf;
            }
            scale = if improved { scale * 0.5 } else { scale * 0.1 };
            if scale < 1e-11 {
                break;
            }
        }
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// All points of the simplex grid with the given number of steps per unit.
pub fn simplex_grid(m: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == m - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(m, left - c, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Mean check loss of a convex combination, computed as a plain double sum
/// over observations `i` and levels `k`. `preds[i][k][m]`.
pub fn averaged_loss(preds: &[Vec<Vec<f64>>], y: &[f64], taus: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        for (k, &tau) in taus.iter().enumerate() {
            let fit: f64 = preds[i][k].iter().zip(w).map(|(p, w)| p * w).sum();
            total += rho(yi - fit, tau);
        }
    }
    total / (y.len() * taus.len()) as f64
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exact minimizer over `t` of `sum_j rho_{tau_j}(e_j - t c_j)`, found by
/// walking the sorted breakpoints until the slope turns nonnegative.
pub fn line_argmin(e: &[f64], c: &[f64], taus: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut slope = 0.0;
    for ((&ej, &cj), &tau) in e.iter().zip(c).zip(taus) {
        if cj == 0.0 {
            continue;
        }
        // slope as t -> -inf
        slope += if cj > 0.0 { -tau * cj } else { (1.0 - tau) * cj };
        pts.push((ej / cj, cj.abs()));
    }
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (t, jump) in pts.iter() {
        slope += jump;
        if slope >= 0.0 {
            return *t;
        }
    }
    pts.last().unwrap().0
}

/// Derivative-free oracle for the composite objective: multi-start
/// Nelder-Mead, then exact line searches along coordinate and random
/// directions, then along the edges of the active set until none descends.
pub fn cqr_oracle(x: &[Vec<f64>], y: &[f64], taus: &[f64], seed: u64) -> (Vec<f64>, f64) {
    let p = x.first().map_or(0, |r| r.len());
    let kk = taus.len();
    let dim = kk + p;
    let f = |v: &[f64]| composite_loss(x, y, taus, v);
    let spread = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let (mut best, mut fbest) = multistart_minimize(&f, dim, spread, 3, seed);
    let mut r = rng(seed ^ 0x5eed);
    let rows = y.len() * kk;
    let tau_rows: Vec<f64> = (0..rows).map(|j| taus[j % kk]).collect();
    for it in 0..400 {
        let dir: Vec<f64> = if it % 2 == 0 {
            let mut d = vec![0.0; dim];
            d[(it / 2) % dim] = 1.0;
            d
        } else {
            (0..dim).map(|_| normal(&mut r)).collect()
        };
        let mut e = Vec::with_capacity(rows);
        let mut c = Vec::with_capacity(rows);
        for (i, &yi) in y.iter().enumerate() {
            let lin: f64 = x[i].iter().zip(&best[kk..]).map(|(a, b)| a * b).sum();
            let dlin: f64 = x[i].iter().zip(&dir[kk..]).map(|(a, b)| a * b).sum();
            for k in 0..kk {
                e.push(yi - best[k] - lin);
                c.push(dir[k] + dlin);
            }
        }
        let t = line_argmin(&e, &c, &tau_rows);
        let cand: Vec<f64> = best.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
        let fc = f(&cand);
        if fc < fbest {
            best = cand;
            fbest = fc;
        }
    }
    edge_descent(x, y, taus, &mut best, &mut fbest);
    (best, fbest)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in (c + 1)..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Walks polytope edges: with the `dim` smallest-residual rows held as an
/// active set, searches along each direction that frees exactly one of them.
fn edge_descent(x: &[Vec<f64>], y: &[f64], taus: &[f64], best: &mut Vec<f64>, fbest: &mut f64) {
    let kk = taus.len();
    let p = x.first().map_or(0, |r| r.len());
    let dim = kk + p;
    let rows = y.len() * kk;
    let zrow = |j: usize| -> Vec<f64> {
        let (i, k) = (j / kk, j % kk);
        let mut z = vec![0.0; dim];
        z[k] = 1.0;
        z[kk..].copy_from_slice(&x[i]);
        z
    };
    let tau_rows: Vec<f64> = (0..rows).map(|j| taus[j % kk]).collect();
    for _ in 0..200 {
        let resid: Vec<f64> = (0..rows)
            .map(|j| {
                let z = zrow(j);
                y[j / kk] - z.iter().zip(best.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()));
        // greedy independent active set
        let mut active: Vec<usize> = Vec::new();
        for &j in &order {
            let mut trial: Vec<Vec<f64>> = active.iter().map(|&a| zrow(a)).collect();
            trial.push(zrow(j));
            if rank(&trial) == trial.len() {
                active.push(j);
                if active.len() == dim {
                    break;
                }
            }
        }
        if active.len() < dim {
            return;
        }
        let mat: Vec<Vec<f64>> = active.iter().map(|&a| zrow(a)).collect();
        let mut improved = false;
        for e in 0..dim {
            let mut rhs = vec![0.0; dim];
            rhs[e] = 1.0;
            let Some(d) = solve_linear(mat.clone(), rhs) else { return };
            let c: Vec<f64> = (0..rows)
                .map(|j| zrow(j).iter().zip(&d).map(|(a, b)| a * b).sum())
                .collect();
            let t = line_argmin(&resid, &c, &tau_rows);
            let cand: Vec<f64> = best.iter().zip(&d).map(|(b, dd)| b + t * dd).collect();
            let fc = composite_loss(x, y, taus, &cand);
            if fc < *fbest - 1e-14 * (1.0 + fbest.abs()) {
                *best = cand;
                *fbest = fc;
                improved = true;
                break;
            }
        }
        if !improved {
            return;
        }
    }
}

fn rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(piv) = (r..m.len()).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())) else { break };
        if m[piv][c].abs() < 1e-10 {
            continue;
        }
        m.swap(r, piv);
        for i in (r + 1)..m.len() {
            let f = m[i][c] / m[r][c];
            for j in c..cols {
                m[i][j] -= f * m[r][j];
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

/// Random regression instance: `n x p` standard normal design, a linear
/// signal plus heavy-ish noise, and `k` equispaced levels.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(r)).collect()).collect();
    let beta: Vec<f64> = (0..p).map(|_| normal(r)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|xi| {
            let e = normal(r);
            0.5 + xi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + e * e.abs().sqrt()
        })
        .collect();
    let taus = (1..=k).map(|j| j as f64 / (k + 1) as f64).collect();
    (x, y, taus)
}

/// Smallest averaged loss over the simplex grid with `steps` steps per unit,
/// by depth-first enumeration with running partial predictions.
/// `preds[i][k][m]`.
pub fn grid_minimum(preds: &[Vec<Vec<f64>>], y: &[f64], taus: &[f64], steps: usize) -> (f64, Vec<f64>) {
    let m = preds[0][0].len();
    let n = y.len();
    let kk = taus.len();
    // column-major per model: cols[m][k * n + i]
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..kk).flat_map(|k| (0..n).map(move |i| (k, i))).map(|(k, i)| preds[i][k][j]).collect())
        .collect();
    let target: Vec<f64> = (0..kk).flat_map(|_| y.iter().copied()).collect();
    let tau_rows: Vec<f64> = (0..kk).flat_map(|k| std::iter::repeat_n(taus[k], n)).collect();
    let rows = target.len();
    let mut grid = Grid {
        cols,
        target,
        tau_rows,
        steps,
        // partial[j] holds target minus the contribution of models before j
        partial: vec![vec![0.0; rows]; m],
        counts: vec![0; m],
        best: (f64::INFINITY, vec![0.0; m]),
    };
    grid.partial[0] = grid.target.clone();
    grid.descend(0, steps);
    grid.best
}

struct Grid {
    cols: Vec<Vec<f64>>,
    target: Vec<f64>,
    tau_rows: Vec<f64>,
    steps: usize,
    partial: Vec<Vec<f64>>,
    counts: Vec<usize>,
    best: (f64, Vec<f64>),
}

impl Grid {
    fn descend(&mut self, j: usize, left: usize) {
        let m = self.cols.len();
        let h = 1.0 / self.steps as f64;
        if m == 1 {
            self.counts[0] = left;
            let loss = leaf_loss(&self.partial[0], &self.cols[0], 1.0, &self.cols[0], 0.0, &self.tau_rows);
            self.record(loss);
            return;
        }
        if j == m - 2 {
            // the last two models share what is left, one pass per split
            for c in 0..=left {
                self.counts[j] = c;
                self.counts[j + 1] = left - c;
                let (wa, wb) = (c as f64 * h, (left - c) as f64 * h);
                let loss = leaf_loss(&self.partial[j], &self.cols[j], wa, &self.cols[j + 1], wb, &self.tau_rows);
                self.record(loss);
            }
            return;
        }
        for c in 0..=left {
            self.counts[j] = c;
            let w = c as f64 * h;
            let (head, tail) = self.partial.split_at_mut(j + 1);
            for ((next, &cur), &v) in tail[0].iter_mut().zip(&head[j]).zip(&self.cols[j]) {
                *next = cur - w * v;
            }
            self.descend(j + 1, left - c);
        }
    }

    fn record(&mut self, total: f64) {
        let loss = total / self.target.len() as f64;
        if loss < self.best.0 {
            let h = 1.0 / self.steps as f64;
            self.best = (loss, self.counts.iter().map(|&c| c as f64 * h).collect());
        }
    }
}

/// Summed check loss of `partial - wa a - wb b`, written as
/// `max(tau e, (tau - 1) e)`.
fn leaf_loss(partial: &[f64], a: &[f64], wa: f64, b: &[f64], wb: f64, tau_rows: &[f64]) -> f64 {
    let mut total = 0.0;
    for (((&e0, &x), &z), &tau) in partial.iter().zip(a).zip(b).zip(tau_rows) {
        let e = e0 - wa * x - wb * z;
        total += (tau * e).max((tau - 1.0) * e);
    }
    total
}
