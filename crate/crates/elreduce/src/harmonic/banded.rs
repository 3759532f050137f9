//! Symmetric banded matrices stored by lower diagonals, with Cholesky.

use crate::error::{Error, Regime, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded {
    n: usize,
    kd: usize,
    /// data[i*(kd+1) + k] = A(i, i−k)
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, kd: usize) -> Self {
        SymBanded { n, kd, data: vec![0.0; n * (kd + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.kd, "entry ({i},{j}) outside band {}", self.kd);
        i * (self.kd + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = i.abs_diff(j);
        if d > self.kd {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds v to A(i,j) (and so to A(j,i)).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Replaces row and column i by the identity row.
    pub fn pin(&mut self, i: usize) {
        for j in i.saturating_sub(self.kd)..(i + self.kd + 1).min(self.n) {
            self.set(i, j, 0.0);
        }
        self.set(i, i, 1.0);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * (self.kd + 1)..(i + 1) * (self.kd + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=self.kd.min(i) {
                let j = i - k;
                y[i] += row[k] * x[j];
                y[j] += row[k] * x[i];
            }
        }
        y
    }

    /// A + s·B for matrices of equal shape.
    pub fn axpy(&self, s: f64, b: &SymBanded) -> SymBanded {
        assert!(self.n == b.n && self.kd == b.kd);
        SymBanded { n: self.n, kd: self.kd, data: self.data.iter().zip(&b.data).map(|(x, y)| x + s * y).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Banded Cholesky A = L·Lᵀ. Fails with a coercivity diagnosis when a
    /// pivot is not positive.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            for k in (1..=kd.min(i)).rev() {
                let j = i - k;
                // L(i,j) = (A(i,j) − Σ_{m<j} L(i,m)L(j,m)) / L(j,j)
                let mut s = l[i * w + k];
                for m in (j.saturating_sub(kd).max(i.saturating_sub(kd)))..j {
                    s -= l[i * w + (i - m)] * l[j * w + (j - m)];
                }
                l[i * w + k] = s / l[j * w];
            }
            let a_ii = l[i * w];
            let mut d = a_ii;
            for m in i.saturating_sub(kd)..i {
                d -= l[i * w + (i - m)].powi(2);
            }
            if !(a_ii > 0.0 && d > 1e-14 * a_ii) {
                return Err(Error::regime(
                    Regime::Coercivity,
                    format!("nonpositive pivot {d:e} at row {i}: operator is not positive definite"),
                ));
            }
            l[i * w] = d.sqrt();
        }
        Ok(BandedCholesky { n, kd, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 1..=kd.min(i) {
                s -= self.l[i * w + k] * y[i - k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in 1..=kd.min(n - 1 - i) {
                s -= self.l[(i + k) * w + k] * y[i + k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}
