use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row_vector(values: &[S]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a 1×1 matrix.
    pub fn item(&self) -> Option<S> {
        (self.rows == 1 && self.cols == 1).then(|| self.data[0])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, trans_self: bool, other: &Self, trans_other: bool) -> Result<Self> {
        let (m, k) = if trans_self {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        let (k2, n) = if trans_other {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "cannot multiply {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = Self::zeros(m, n);
        S::gemm(
            m,
            k,
            n,
            &self.data,
            trans_self,
            &other.data,
            trans_other,
            &mut out.data,
            false,
        );
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(false, other, false)
    }

    /// Stack the rows of several matrices with equal column counts.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            rows: parts.iter().map(|p| p.rows).sum(),
            cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |r, c| self[(r, start + c)])
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, factor: S) {
        for a in &mut self.data {
            *a = *a * factor;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<S> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(S::zero(), S::max)
        })
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;

    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::<f64>::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 1.5);
        let b = Matrix::<f64>::from_fn(4, 2, |r, c| (r as f64) * 0.5 - c as f64);
        let direct = a.matmul_t(false, &b, true).unwrap();
        let explicit = a.matmul(&b.transpose()).unwrap();
        assert_eq!(direct, explicit);
        let at = a.matmul_t(true, &a, false).unwrap();
        assert_eq!(at, a.transpose().matmul(&a).unwrap());
    }

    #[test]
    fn inner_dimension_mismatch_is_an_error() {
        let a = Matrix::<f32>::zeros(2, 3);
        assert!(a.matmul(&a).is_err());
        assert!(Matrix::<f32>::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
