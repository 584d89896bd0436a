//! Small dense helpers for the log-determinant family.

use nalgebra::DMatrix;

/// Log-determinant of a symmetric positive definite matrix, `None` if factorization fails.
pub fn logdet_pd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_pd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    Some(m.clone().cholesky()?.inverse())
}

/// Cholesky factor grown one row at a time, for rank-one logdet updates during greedy selection.
#[derive(Debug, Clone, Default)]
pub struct IncrementalCholesky {
    rows: Vec<Vec<f64>>,
}

impl IncrementalCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Solves `L y = col` by forward substitution.
    pub fn forward(&self, col: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&y).map(|(l, y)| l * y).sum();
            y.push((col[i] - s) / row[i]);
        }
        y
    }

    /// Schur complement `diag - col^T M^{-1} col` of a new element against the current set.
    pub fn schur(&self, col: &[f64], diag: f64) -> f64 {
        let y = self.forward(col);
        diag - y.iter().map(|v| v * v).sum::<f64>()
    }

    /// Appends an element. Returns `false` (and leaves the factor untouched) if the
    /// extended matrix is not positive definite.
    pub fn push(&mut self, col: &[f64], diag: f64) -> bool {
        let mut y = self.forward(col);
        let s = diag - y.iter().map(|v| v * v).sum::<f64>();
        if !(s > 0.0) {
            return false;
        }
        y.push(s.sqrt());
        self.rows.push(y);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incremental_matches_dense_logdet() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let mut inc = IncrementalCholesky::new();
        let mut acc = 0.0;
        for i in 0..3 {
            let col: Vec<f64> = (0..i).map(|j| m[(i, j)]).collect();
            acc += inc.schur(&col, m[(i, i)]).ln();
            assert!(inc.push(&col, m[(i, i)]));
        }
        assert!((acc - logdet_pd(&m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular_extension() {
        let mut inc = IncrementalCholesky::new();
        assert!(inc.push(&[], 1.0));
        assert!(!inc.push(&[1.0], 1.0));
        assert_eq!(inc.len(), 1);
    }

    #[test]
    fn inverse_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let inv = inverse_pd(&m).unwrap();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
        assert_eq!(logdet_pd(&DMatrix::zeros(0, 0)), Some(0.0));
    }
}
