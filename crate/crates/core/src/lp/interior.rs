//! Frisch-Newton interior point method for check-loss regression.
//!
//! The regression `min sum_r rho_{tau_r}(y_r - z_r' theta)` is solved through its
//! bounded dual
//!
//! ```text
//! min  c'a   s.t.  Z'a = Z'(1 - tau),  0 <= a <= 1,      c = -y,
//! ```
//!
//! whose equality multipliers are `-theta`. Each Newton step needs one solve
//! with `Z' Q Z`, which for the shared-slope design reduces to a diagonal
//! intercept block, a `K x p` cross block and a single `p x p` Gram matrix
//! weighted by `sum_k q_{ki}`.

use super::dense::{IndependentSet, Lu, PsdCholesky, Square};
use super::{dot, LpOptions, LpSolution, LpStatus, PiecewiseLinearProgram};
use crate::error::{Error, Result};
use crate::loss::{psi, rho};

/// `Z v` for stacked rows.
fn apply(prog: &PiecewiseLinearProgram, v: &[f64]) -> Vec<f64> {
    let (n, kk) = (prog.observations(), prog.blocks());
    let beta = &v[kk..];
    let lin: Vec<f64> = (0..n).map(|i| dot(prog.x_row(i), beta)).collect();
    let mut out = Vec::with_capacity(n * kk);
    for &b in &v[..kk] {
        out.extend(lin.iter().map(|&l| b + l));
    }
    out
}

/// `Z' v` for a stacked vector.
fn apply_transpose(prog: &PiecewiseLinearProgram, v: &[f64]) -> Vec<f64> {
    let (n, p, kk) = (prog.observations(), prog.slopes(), prog.blocks());
    let mut out = vec![0.0; kk + p];
    for k in 0..kk {
        out[k] = v[k * n..(k + 1) * n].iter().sum();
    }
    if p > 0 {
        for i in 0..n {
            let s: f64 = (0..kk).map(|k| v[k * n + i]).sum();
            if s != 0.0 {
                for (o, &xv) in out[kk..].iter_mut().zip(prog.x_row(i)) {
                    *o += s * xv;
                }
            }
        }
    }
    out
}

/// `Z' diag(d) Z`.
fn normal_matrix(prog: &PiecewiseLinearProgram, d: &[f64]) -> Square {
    let (n, p, kk) = (prog.observations(), prog.slopes(), prog.blocks());
    let q = kk + p;
    let mut m = Square::zeros(q);
    // cross[k * p + j] = sum_i d_ki x_ij, gram upper triangle weighted by sum_k d_ki
    let mut cross = vec![0.0; kk * p];
    let mut gram = vec![0.0; p * p];
    let mut diag = vec![0.0; kk];
    for i in 0..n {
        let xi = prog.x_row(i);
        let mut s = 0.0;
        for k in 0..kk {
            let di = d[k * n + i];
            s += di;
            diag[k] += di;
            for (c, &xv) in cross[k * p..(k + 1) * p].iter_mut().zip(xi) {
                *c += di * xv;
            }
        }
        for a in 0..p {
            let sa = s * xi[a];
            for b in a..p {
                gram[a * p + b] += sa * xi[b];
            }
        }
    }
    for k in 0..kk {
        m.set(k, k, diag[k]);
        for j in 0..p {
            m.set(k, kk + j, cross[k * p + j]);
            m.set(kk + j, k, cross[k * p + j]);
        }
    }
    for a in 0..p {
        for b in a..p {
            m.set(kk + a, kk + b, gram[a * p + b]);
            m.set(kk + b, kk + a, gram[a * p + b]);
        }
    }
    m
}

/// Largest step in `(0, inf)` keeping `v + t dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Minimizes the composite check loss of `prog`.
///
/// A `warm_start` with a compatible parameter count seeds the dual iterate
/// from its parameters; the optimum reached is the same as a cold solve.
pub fn solve_check_loss_lp(
    prog: &PiecewiseLinearProgram,
    warm_start: Option<&LpSolution>,
    options: &LpOptions,
) -> Result<LpSolution> {
    let q = prog.num_params();
    let rows = prog.rows();
    let n = prog.observations();
    if let Some(ws) = warm_start {
        if ws.params.len() != q {
            return Err(Error::shape(format!(
                "warm start has {} parameters, program has {q}",
                ws.params.len()
            )));
        }
    }

    let taus: Vec<f64> = (0..rows).map(|r| prog.taus()[r / n]).collect();
    let ystack: Vec<f64> = (0..rows).map(|r| prog.response()[r % n]).collect();
    let c: Vec<f64> = ystack.iter().map(|v| -v).collect();

    // Primal (bounded dual of the regression) starts at the centre a = 1 - tau.
    let mut a: Vec<f64> = taus.iter().map(|t| 1.0 - t).collect();
    let mut s: Vec<f64> = taus.clone();

    let theta0 = match warm_start {
        Some(ws) => ws.params.clone(),
        None => {
            let gram = normal_matrix(prog, &vec![1.0; rows]);
            PsdCholesky::factor(&gram).solve(&apply_transpose(prog, &ystack))
        }
    };
    let mut yv: Vec<f64> = theta0.iter().map(|v| -v).collect();

    let fitted = apply(prog, &yv);
    let mut r: Vec<f64> = c.iter().zip(&fitted).map(|(ci, fi)| ci - fi).collect();
    let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / rows as f64;
    let floor = 1e-3 * mean_abs + 1e-12;
    let mut z = vec![0.0; rows];
    let mut w = vec![0.0; rows];
    for i in 0..rows {
        z[i] = r[i].max(0.0);
        w[i] = z[i] - r[i];
        if z[i] + w[i] < floor {
            z[i] += floor;
            w[i] += floor;
        }
    }

    let beta = options.step_fraction;
    let mut iterations = 0;
    let mut gap = dot(&z, &a) + dot(&w, &s);
    let mut status = LpStatus::MaxIterations;

    let mut qv = vec![0.0; rows];
    let mut dx = vec![0.0; rows];
    let mut dz = vec![0.0; rows];
    let mut dw = vec![0.0; rows];
    let mut inv_a = vec![0.0; rows];
    let mut inv_s = vec![0.0; rows];
    let mut xi = vec![0.0; rows];
    let mut cxz = vec![0.0; rows];
    let mut csw = vec![0.0; rows];
    let mut adj = vec![0.0; rows];
    while iterations < options.max_iterations {
        let theta: Vec<f64> = yv.iter().map(|v| -v).collect();
        let objective = prog.objective(&theta);
        if !gap.is_finite() {
            break;
        }
        if gap <= options.gap_tolerance * objective.max(1e-12 * (1.0 + mean_abs)) {
            status = LpStatus::Optimal;
            break;
        }
        iterations += 1;

        for i in 0..rows {
            inv_a[i] = 1.0 / a[i];
            inv_s[i] = 1.0 / s[i];
            qv[i] = 1.0 / (z[i] * inv_a[i] + w[i] * inv_s[i]);
            r[i] = z[i] - w[i];
        }
        let chol = PsdCholesky::factor(&normal_matrix(prog, &qv));
        let qr: Vec<f64> = qv.iter().zip(&r).map(|(q, r)| q * r).collect();
        let mut rhs = apply_transpose(prog, &qr);
        let mut dy = chol.solve(&rhs);
        let mut ady = apply(prog, &dy);
        for i in 0..rows {
            dx[i] = qv[i] * (ady[i] - r[i]);
            dz[i] = -z[i] * (dx[i] * inv_a[i] + 1.0);
            dw[i] = -w[i] * (-dx[i] * inv_s[i] + 1.0);
        }
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let mut fp = (beta * max_step(&a, &dx).min(max_step(&s, &ds))).min(1.0);
        let mut fd = (beta * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);

        if fp.min(fd) < 1.0 {
            // Mehrotra corrector with an adaptively chosen centring target.
            let mu0 = dot(&z, &a) + dot(&w, &s);
            let mut g = 0.0;
            for i in 0..rows {
                g += (z[i] + fd * dz[i]) * (a[i] + fp * dx[i])
                    + (w[i] + fd * dw[i]) * (s[i] + fp * ds[i]);
            }
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * rows as f64);
            for i in 0..rows {
                cxz[i] = dx[i] * dz[i] * inv_a[i];
                csw[i] = ds[i] * dw[i] * inv_s[i];
                xi[i] = mu * (inv_a[i] - inv_s[i]);
                adj[i] = qv[i] * (r[i] - xi[i] + cxz[i] - csw[i]);
            }
            rhs = apply_transpose(prog, &adj);
            dy = chol.solve(&rhs);
            ady = apply(prog, &dy);
            for i in 0..rows {
                dx[i] = qv[i] * (ady[i] + xi[i] - r[i] - cxz[i] + csw[i]);
                dz[i] = (mu - z[i] * dx[i]) * inv_a[i] - z[i] - cxz[i];
                dw[i] = (mu + w[i] * dx[i]) * inv_s[i] - w[i] - csw[i];
            }
            let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
            fp = (beta * max_step(&a, &dx).min(max_step(&s, &ds))).min(1.0);
            fd = (beta * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        }

        for i in 0..rows {
            a[i] += fp * dx[i];
            s[i] -= fp * dx[i];
            z[i] += fd * dz[i];
            w[i] += fd * dw[i];
        }
        for (y, d) in yv.iter_mut().zip(&dy) {
            *y += fd * d;
        }
        gap = dot(&z, &a) + dot(&w, &s);
    }

    let params: Vec<f64> = yv.iter().map(|v| -v).collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver {
            message: "interior point iterate became non-finite".into(),
            iterations,
        });
    }
    let duals: Vec<f64> = a.iter().zip(&taus).map(|(ai, t)| ai - (1.0 - t)).collect();
    let objective = prog.objective(&params);

    if options.polish {
        if let Some((pp, pd)) = polish(prog, &params, &duals, &taus) {
            let pobj = prog.objective(&pp);
            if pobj <= objective + 1e-9 * (1.0 + objective) {
                return Ok(LpSolution {
                    params: pp,
                    objective: pobj,
                    iterations,
                    status: LpStatus::Optimal,
                    gap: 0.0,
                    duals: pd,
                    vertex: true,
                });
            }
        }
    }

    Ok(LpSolution {
        params,
        objective,
        iterations,
        status,
        gap,
        duals,
        vertex: false,
    })
}

/// Snaps an approximate optimum to an exact vertex, returning it only when
/// the dual certificate for the chosen basis is feasible.
///
/// The basis is first taken from the `K + p` smallest-residual independent
/// rows. On a flat optimal face the analytic centre leaves no row clearly
/// interpolated, so a second attempt prefers rows whose dual multiplier sits
/// strictly inside its box.
fn polish(
    prog: &PiecewiseLinearProgram,
    params: &[f64],
    ip_duals: &[f64],
    taus: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let rows = prog.rows();
    let res = prog.residuals(params);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&i, &j| res[i].abs().total_cmp(&res[j].abs()).then(i.cmp(&j)));
    if let Some(found) = try_basis(prog, &order, taus) {
        return Some(found);
    }
    let interior = |r: usize| {
        let a = ip_duals[r] + 1.0 - taus[r];
        a.min(1.0 - a)
    };
    order.sort_by(|&i, &j| {
        interior(j)
            .total_cmp(&interior(i))
            .then(res[i].abs().total_cmp(&res[j].abs()))
            .then(i.cmp(&j))
    });
    try_basis(prog, &order, taus)
}

fn try_basis(
    prog: &PiecewiseLinearProgram,
    order: &[usize],
    taus: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let q = prog.num_params();
    let rows = prog.rows();
    let n = prog.observations();
    let mut set = IndependentSet::new(q);
    let mut basis = Vec::with_capacity(q);
    let mut row = vec![0.0; q];
    for &r in order {
        prog.design_row(r, &mut row);
        if set.try_push(&row) {
            basis.push(r);
            if set.is_full() {
                break;
            }
        }
    }
    if basis.len() < q {
        return None;
    }

    let mut zb = Square::zeros(q);
    for (bi, &r) in basis.iter().enumerate() {
        prog.design_row(r, &mut row);
        for (j, &v) in row.iter().enumerate() {
            zb.set(bi, j, v);
        }
    }
    let lu = Lu::factor(&zb)?;
    let yb: Vec<f64> = basis.iter().map(|&r| prog.response()[r % n]).collect();
    let theta = lu.solve(&yb);
    if theta.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let res = prog.residuals(&theta);
    let mut duals: Vec<f64> = res.iter().zip(taus).map(|(&e, &t)| psi(e, t)).collect();
    let mut in_basis = vec![false; rows];
    for &r in &basis {
        in_basis[r] = true;
        duals[r] = 0.0;
    }
    let g = apply_transpose(prog, &duals);
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let db = lu.solve_transpose(&neg);
    for (&r, &d) in basis.iter().zip(&db) {
        let t = taus[r];
        if !(d >= t - 1.0 - 1e-9 && d <= t + 1e-9) {
            return None;
        }
        duals[r] = d.clamp(t - 1.0, t);
    }
    debug_assert!(basis.iter().all(|&r| rho(res[r], taus[r]) < 1e-6 * (1.0 + res[r].abs())));
    Some((theta, duals))
}
