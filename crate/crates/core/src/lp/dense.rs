//! Small dense linear algebra for the `(K + p)`-sized systems the solvers form.

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub(crate) struct Square {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Square {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Cholesky factor of a symmetric positive semidefinite matrix. Pivots that
/// collapse relative to the largest diagonal entry are treated as exact
/// dependencies: the matching component of every solution is pinned to zero.
pub(crate) struct PsdCholesky {
    n: usize,
    l: Vec<f64>,
    skipped: Vec<bool>,
}

impl PsdCholesky {
    pub fn factor(a: &Square) -> Self {
        let n = a.n;
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let floor = max_diag * 1e-13 + f64::MIN_POSITIVE;
        let mut l = vec![0.0; n * n];
        let mut skipped = vec![false; n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= floor {
                skipped[j] = true;
                continue;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Self { n, l, skipped }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = rhs.to_vec();
        for i in 0..n {
            if self.skipped[i] {
                z[i] = 0.0;
                continue;
            }
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[i * n + k] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            if self.skipped[i] {
                z[i] = 0.0;
                continue;
            }
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        z
    }
}

/// LU factorization with partial pivoting; `None` when numerically singular.
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Square) -> Option<Self> {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return if n == 0 {
                Some(Self { n, lu, perm })
            } else {
                None
            };
        }
        for c in 0..n {
            let (piv, pmax) = (c..n)
                .map(|r| (r, lu[r * n + c].abs()))
                .fold((c, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= scale * 1e-13 {
                return None;
            }
            if piv != c {
                for j in 0..n {
                    lu.swap(c * n + j, piv * n + j);
                }
                perm.swap(c, piv);
            }
            let d = lu[c * n + c];
            for r in (c + 1)..n {
                let f = lu[r * n + c] / d;
                lu[r * n + c] = f;
                if f != 0.0 {
                    for j in (c + 1)..n {
                        lu[r * n + j] -= f * lu[c * n + j];
                    }
                }
            }
        }
        Some(Self { n, lu, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        // U^T z = b
        for i in 0..n {
            for k in 0..i {
                z[i] -= self.lu[k * n + i] * z[k];
            }
            z[i] /= self.lu[i * n + i];
        }
        // L^T v = z
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                z[i] -= self.lu[k * n + i] * z[k];
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

/// Incrementally collects linearly independent vectors via modified
/// Gram-Schmidt with one reorthogonalization pass.
pub(crate) struct IndependentSet {
    dim: usize,
    basis: Vec<Vec<f64>>,
}

impl IndependentSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            basis: Vec::with_capacity(dim),
        }
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.dim
    }

    /// Adds `v` if it is not (numerically) in the span collected so far.
    pub fn try_push(&mut self, v: &[f64]) -> bool {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        let mut u = v.to_vec();
        for _ in 0..2 {
            for b in &self.basis {
                let dot: f64 = u.iter().zip(b).map(|(a, c)| a * c).sum();
                for (ui, bi) in u.iter_mut().zip(b) {
                    *ui -= dot * bi;
                }
            }
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            return false;
        }
        u.iter_mut().for_each(|x| *x /= norm);
        self.basis.push(u);
        true
    }
}
