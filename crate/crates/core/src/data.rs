use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response vector plus an `n x p` covariate matrix (row-major) with unique
/// column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        let p = names.len();
        if n == 0 {
            return Err(Error::domain("dataset needs at least one observation"));
        }
        if x.len() != n * p {
            return Err(Error::shape(format!(
                "covariate matrix has {} entries, expected {n} x {p}",
                x.len()
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("response {pos} is not finite")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "covariate '{}' at observation {} is not finite",
                names[pos % p],
                pos / p
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::domain(format!("duplicate column name '{name}'")));
            }
        }
        Ok(Self { y, x, p, names })
    }

    /// Builds a dataset from covariate columns, naming them `x1..xp`.
    pub fn from_columns(y: Vec<f64>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = y.len();
        if let Some(c) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::shape(format!(
                "column {c} has {} rows, response has {n}",
                columns[c].len()
            )));
        }
        let p = columns.len();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.extend(columns.iter().map(|c| c[i]));
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::new(y, x, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.value(i, j)).collect()
    }

    /// The rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::shape(format!(
                "row {bad} out of range for {} observations",
                self.n()
            )));
        }
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let mut x = Vec::with_capacity(indices.len() * self.p);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Self::new(y, x, self.names.clone())
    }

    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::shape("replacement response has the wrong length"));
        }
        Self::new(y, self.x.clone(), self.names.clone())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    pub(crate) fn check_columns(&self, columns: &[usize]) -> Result<()> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.p) {
            return Err(Error::shape(format!(
                "column {bad} out of range for {} covariates",
                self.p
            )));
        }
        Ok(())
    }

    /// Row-major design of the chosen columns, skipping observation `skip`.
    pub(crate) fn design(&self, columns: &[usize], skip: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let kept = n - usize::from(skip.is_some());
        let mut x = Vec::with_capacity(kept * columns.len());
        let mut y = Vec::with_capacity(kept);
        for i in (0..n).filter(|&i| Some(i) != skip) {
            let row = self.row(i);
            x.extend(columns.iter().map(|&j| row[j]));
            y.push(self.y[i]);
        }
        (x, y)
    }
}

/// Pearson correlation; zero when either series has no variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa.sqrt() * sbb.sqrt())
    }
}
