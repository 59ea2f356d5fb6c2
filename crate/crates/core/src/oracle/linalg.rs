//! Small dense LU factorization shared by the chain and LP solvers.

use crate::error::{domain, Result};

/// `P A = L U` with partial pivoting; `L` (unit diagonal) and `U` are stored
/// in place.
pub(crate) struct Lu {
    a: Vec<Vec<f64>>,
    /// `perm[k]` is the original row placed at position `k`.
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, max) = (k..n)
                .map(|i| (i, a[i][k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if max <= 1e-300 {
                return Err(domain("singular linear system"));
            }
            a.swap(k, piv);
            perm.swap(k, piv);
            let (top, rest) = a.split_at_mut(k + 1);
            let pivot_row = &top[k];
            let d = pivot_row[k];
            for row in rest.iter_mut() {
                let f = row[k] / d;
                if f == 0.0 {
                    continue;
                }
                row[k] = f;
                for (x, &y) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                    *x -= f * y;
                }
            }
        }
        Ok(Self { a, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.a.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.a[i][j] * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.a[i][j] * y[j]).sum();
            y[i] = (y[i] - s) / self.a[i][i];
        }
        y
    }

    /// Solves `A^T y = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.a.len();
        let mut z = c.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.a[j][i] * z[j]).sum();
            z[i] = (z[i] - s) / self.a[i][i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.a[j][i] * z[j]).sum();
            z[i] -= s;
        }
        let mut y = vec![0.0; n];
        for (k, &row) in self.perm.iter().enumerate() {
            y[row] = z[k];
        }
        y
    }
}
