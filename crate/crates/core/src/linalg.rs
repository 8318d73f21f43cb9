//! Tridiagonal kernels shared by the layer solvers and the radial discretizations.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tridiag {
    /// `lower[i]` couples row `i+1` to column `i`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[i]` couples row `i` to column `i+1`.
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n.saturating_sub(1)], diag: vec![0.0; n], upper: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i == j + 1 {
            self.lower[j]
        } else if j == i + 1 {
            self.upper[i]
        } else {
            0.0
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn scale(&mut self, t: f64) {
        for v in self.lower.iter_mut().chain(self.diag.iter_mut()).chain(self.upper.iter_mut()) {
            *v *= t;
        }
    }

    /// Determinant by the three-term continuant recurrence. Returns the value and
    /// the smallest leading principal minor in absolute value.
    pub fn det(&self) -> (f64, f64) {
        let mut f_prev = 1.0;
        let mut f = 1.0;
        let mut smallest = f64::INFINITY;
        for i in 0..self.len() {
            let next = if i == 0 {
                self.diag[0]
            } else {
                self.diag[i] * f - self.lower[i - 1] * self.upper[i - 1] * f_prev
            };
            f_prev = f;
            f = next;
            smallest = smallest.min(f.abs());
        }
        (f, smallest)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// Solves `A x = rhs` by Gaussian elimination with partial pivoting
    /// (band grows to one extra superdiagonal). `None` when a pivot vanishes.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        if n == 0 {
            return Some(Vec::new());
        }
        // rows stored as (d, u1, u2) relative to the diagonal
        let mut d = self.diag.clone();
        let mut u1: Vec<f64> = (0..n).map(|i| if i + 1 < n { self.upper[i] } else { 0.0 }).collect();
        let mut u2 = vec![0.0; n];
        let mut l: Vec<f64> = (0..n).map(|i| if i + 1 < n { self.lower[i] } else { 0.0 }).collect();
        let mut b = rhs.to_vec();
        let scale = self.diag.iter().chain(&self.lower).chain(&self.upper).fold(0.0_f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        for i in 0..n {
            if i + 1 < n && l[i].abs() > d[i].abs() {
                // swap row i and row i+1
                let (ri_d, ri_u1, ri_u2) = (d[i], u1[i], u2[i]);
                d[i] = l[i];
                u1[i] = d[i + 1];
                u2[i] = u1[i + 1];
                l[i] = ri_d;
                d[i + 1] = ri_u1;
                u1[i + 1] = ri_u2;
                b.swap(i, i + 1);
            }
            if d[i].abs() <= tiny || !d[i].is_finite() {
                return None;
            }
            if i + 1 < n {
                let m = l[i] / d[i];
                d[i + 1] -= m * u1[i];
                u1[i + 1] -= m * u2[i];
                b[i + 1] -= m * b[i];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= u2[i] * x[i + 2];
            }
            x[i] = s / d[i];
        }
        Some(x)
    }
}

/// Infinity norm.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Dense LU solve; `None` when singular.
pub fn dense_solve(a: nalgebra::DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    a.lu().solve(&rhs).map(|x| x.iter().copied().collect())
}
