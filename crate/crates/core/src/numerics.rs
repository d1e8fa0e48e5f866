//! Dense matrices and the small singular-value routine used by the
//! linearity probe.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; finiteness is enforced where
//! values enter the crate (matrix constructors, model files, threat sets).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        ensure_finite("matrix", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows; every row must have the same width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::invalid(format!(
                "row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn ensure_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!(
            "{what}: non-finite entry at index {i}"
        ))),
        None => Ok(()),
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Singular values of `m` in descending order (`min(rows, cols)` of them).
///
/// One-sided Jacobi on the columns of the taller orientation: pairs of
/// columns are rotated until mutually orthogonal, after which the column
/// norms are the singular values.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::invalid("singular_values of an empty matrix"));
    }
    let tall = if m.rows >= m.cols { m.clone() } else { m.transpose() };
    let (rows, n) = (tall.rows, tall.cols);

    // column-major copy so each rotation touches contiguous memory
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..rows).map(|r| tall.get(r, c)).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (left, right) = cols.split_at_mut(q);
                let (ap, aq) = (&mut left[p], &mut right[0]);
                let alpha = dot(ap, ap);
                let beta = dot(aq, aq);
                let gamma = dot(ap, aq);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols.iter().map(|c| norm_l2(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Eigenvalues of a symmetric 2x2 matrix via the characteristic polynomial.
    fn sym2_eigen(a: f64, b: f64, d: f64) -> (f64, f64) {
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 + disc, tr / 2.0 - disc)
    }

    #[test]
    fn diagonal_matrix() {
        let m = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(singular_values(&m).unwrap(), vec![4.0, 3.0]);
    }

    #[test]
    fn rank_one_symmetric() {
        let m = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let sv = singular_values(&m).unwrap();
        assert!((sv[0] - 2.0).abs() < 1e-12);
        assert!(sv[1].abs() < 1e-12);
    }

    #[test]
    fn three_by_two_matches_gram_eigenvalues() {
        let m = Mat::from_rows(&[
            vec![0.7, -1.3],
            vec![2.1, 0.4],
            vec![-0.6, 1.9],
        ])
        .unwrap();
        // mᵀm entries by hand
        let a = 0.7 * 0.7 + 2.1 * 2.1 + 0.6 * 0.6;
        let b = 0.7 * -1.3 + 2.1 * 0.4 + -0.6 * 1.9;
        let d = 1.3 * 1.3 + 0.4 * 0.4 + 1.9 * 1.9;
        let (l1, l2) = sym2_eigen(a, b, d);
        let sv = singular_values(&m).unwrap();
        assert_eq!(sv.len(), 2);
        assert!((sv[0] * sv[0] - l1).abs() <= 1e-9 * l1);
        assert!((sv[1] * sv[1] - l2).abs() <= 1e-9 * l1);
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = Mat::zeros(0, 3);
        assert!(matches!(singular_values(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Mat::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Mat::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn arb_mat() -> impl Strategy<Value = Mat> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            prop::collection::vec(-5.0f64..5.0, r * c)
                .prop_map(move |d| Mat::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn squared_values_sum_to_frobenius(m in arb_mat()) {
            let sv = singular_values(&m).unwrap();
            prop_assert_eq!(sv.len(), m.rows().min(m.cols()));
            let s: f64 = sv.iter().map(|x| x * x).sum();
            let f = m.frobenius_sq();
            prop_assert!((s - f).abs() <= 1e-9 * f.max(1e-300));
            prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(sv.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn transpose_invariant(m in arb_mat()) {
            let a = singular_values(&m).unwrap();
            let b = singular_values(&m.transpose()).unwrap();
            let scale = a[0].max(1.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }
}
