//! Banded LU factorization without pivoting. Adequate for the row
//! diagonally dominant matrices produced by the monotone assembly.

use crate::assembly::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    /// Row-major band storage, `2 * bw + 1` entries per row; entry `(i, j)`
    /// lives at `i * width + (j + bw - i)`.
    data: Vec<f64>,
}

impl BandedLu {
    pub fn factor(m: &SparseMatrix) -> Result<Self> {
        let n = m.len();
        let bw = m.bandwidth();
        let width = 2 * bw + 1;
        let mut data = vec![0.0; n * width];
        for (i, r) in m.rows.iter().enumerate() {
            for &(j, v) in &r.entries {
                data[i * width + j + bw - i] += v;
            }
        }
        for k in 0..n {
            let pivot = data[k * width + bw];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "zero or non-finite pivot {pivot:e} at row {k}"
                )));
            }
            let jmax = (k + bw).min(n - 1);
            for i in (k + 1)..=jmax {
                let lik_at = i * width + k + bw - i;
                let lik = data[lik_at];
                if lik == 0.0 {
                    continue;
                }
                let l = lik / pivot;
                data[lik_at] = l;
                for j in (k + 1)..=jmax {
                    let ukj = data[k * width + j + bw - k];
                    if ukj != 0.0 {
                        data[i * width + j + bw - i] -= l * ukj;
                    }
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solves in place.
    pub fn solve(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.data[i * width + j + bw - i] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for j in (i + 1)..=hi {
                s -= self.data[i * width + j + bw - i] * x[j];
            }
            x[i] = s / self.data[i * width + bw];
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::LinearSolve(format!("non-finite solution at row {i}")));
        }
        Ok(())
    }
}

/// Gauss-Seidel / SOR on the sparse rows until the update falls below `tol`.
/// Returns the sweep count.
pub fn sor_solve(
    m: &SparseMatrix,
    rhs: &[f64],
    x: &mut [f64],
    omega: f64,
    tol: f64,
    max_iters: usize,
) -> Result<usize> {
    let diag: Vec<f64> = m.rows.iter().enumerate().map(|(i, r)| r.diagonal(i)).collect();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::LinearSolve(format!("non-positive diagonal at row {i}")));
    }
    for it in 1..=max_iters {
        let mut change: f64 = 0.0;
        for (i, r) in m.rows.iter().enumerate() {
            let resid = rhs[i] - r.dot(x);
            let delta = omega * resid / diag[i];
            x[i] += delta;
            change = change.max(delta.abs());
        }
        if change <= tol {
            return Ok(it);
        }
    }
    Err(Error::LinearSolve(format!(
        "SOR did not reach tolerance {tol:e} in {max_iters} sweeps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{Row, RowKind};
    use proptest::prelude::*;

    fn dense_to_sparse(a: &[Vec<f64>]) -> SparseMatrix {
        SparseMatrix {
            rows: a
                .iter()
                .map(|r| Row {
                    kind: RowKind::Interior,
                    entries: r
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(j, v)| (j, *v))
                        .collect(),
                    diffusion_weight: 0.0,
                })
                .collect(),
        }
    }

    fn banded_dominant(n: usize, bw: usize, seed: &[f64]) -> Vec<Vec<f64>> {
        let mut k = 0;
        let mut next = || {
            k += 1;
            seed[k % seed.len()]
        };
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                if j != i {
                    a[i][j] = -next().abs();
                    off += a[i][j].abs();
                }
            }
            a[i][i] = off + 0.1 + next().abs();
        }
        a
    }

    #[test]
    fn tridiagonal_solve() {
        let a = vec![
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ];
        let lu = BandedLu::factor(&dense_to_sparse(&a)).unwrap();
        let mut x = vec![1.0, 0.0, 1.0];
        lu.solve(&mut x).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn residual_is_small(
            n in 3usize..40,
            bw in 1usize..6,
            seed in proptest::collection::vec(0.01f64..2.0, 8..16),
            b in proptest::collection::vec(-5.0f64..5.0, 40),
        ) {
            let a = banded_dominant(n, bw, &seed);
            let m = dense_to_sparse(&a);
            let lu = BandedLu::factor(&m).unwrap();
            let mut x = b[..n].to_vec();
            lu.solve(&mut x).unwrap();
            let r = m.mul_vec(&x);
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() < 1e-10);
            }
            let mut y = vec![0.0; n];
            sor_solve(&m, &b[..n], &mut y, 1.0, 1e-13, 100_000).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - y[i]).abs() < 1e-9);
            }
        }
    }
}
