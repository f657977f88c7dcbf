//! Row-compressed storage for the nearest-neighbor transition matrix.

use nalgebra::{DMatrix, DVector};

/// Sparse p×p matrix stored as per-row `(column, value)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTransition {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseTransition {
    /// Rows must only reference columns `< rows.len()`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let p = rows.len();
        debug_assert!(rows.iter().flatten().all(|&(j, _)| j < p));
        Self { rows }
    }

    /// `scale · I`.
    pub fn scaled_identity(p: usize, scale: f64) -> Self {
        Self {
            rows: (0..p).map(|i| vec![(i, scale)]).collect(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square());
        Self {
            rows: (0..m.nrows())
                .map(|i| {
                    (0..m.ncols())
                        .filter(|&j| m[(i, j)] != 0.0)
                        .map(|j| (j, m[(i, j)]))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .filter(|&&(c, _)| c == j)
            .map(|&(_, v)| v)
            .sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut m = DMatrix::zeros(p, p);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `F · m` for a p×c dense `m`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.dim());
        let mut out = DMatrix::zeros(self.dim(), m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for (i, row) in self.rows.iter().enumerate() {
                out[(i, c)] = row.iter().map(|&(j, v)| v * col[j]).sum();
            }
        }
        out
    }

    /// `m · F` for an r×p dense `m`.
    pub fn dense_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.dim());
        let mut out = DMatrix::zeros(m.nrows(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            let src = m.column(i);
            for &(j, v) in row {
                let mut dst = out.column_mut(j);
                dst.axpy(v, &src, 1.0);
            }
        }
        out
    }

    /// `m · Fᵀ` for an r×p dense `m`.
    pub fn dense_mul_transpose(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.dim());
        let mut out = DMatrix::zeros(m.nrows(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.column_mut(i);
            for &(j, v) in row {
                dst.axpy(v, &m.column(j), 1.0);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum::<f64>()),
        )
    }

    /// Power-iteration estimate of the spectral radius. Exact for the
    /// nonnegative matrices built by this crate, up to the iteration limit.
    pub fn spectral_radius_estimate(&self, iterations: usize) -> f64 {
        let p = self.dim();
        if p == 0 {
            return 0.0;
        }
        let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..iterations {
            let w = self.mul_vec(&v);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            est = norm;
            v = w / norm;
        }
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseTransition {
        SparseTransition::from_rows(vec![
            vec![(0, 0.5), (2, 0.25)],
            vec![(1, 0.4)],
            vec![(0, 0.1), (1, 0.2), (2, 0.3)],
        ])
    }

    #[test]
    fn products_match_dense() {
        let f = sample();
        let d = f.to_dense();
        let m = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        assert!((f.mul_dense(&m) - &d * &m).norm() < 1e-14);
        let r = DMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 + 0.5);
        assert!((f.dense_mul(&r) - &r * &d).norm() < 1e-14);
        assert!((f.dense_mul_transpose(&r) - &r * d.transpose()).norm() < 1e-14);
        assert_eq!(SparseTransition::from_dense(&d), f);
    }

    #[test]
    fn radius_of_scaled_identity() {
        let f = SparseTransition::scaled_identity(5, 0.7);
        assert!((f.spectral_radius_estimate(10) - 0.7).abs() < 1e-15);
    }
}
