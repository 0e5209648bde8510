//! Dense row-major matrices and the embedding matrix every module consumes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on the row norm for a matrix to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Plain dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// N×d matrix of feature rows with optional identifiers.
///
/// Values are always finite. `is_normalized` is computed at construction:
/// true iff every row has L2 norm within [`NORM_TOLERANCE`] of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    values: Matrix<T>,
    ids: Option<Vec<String>>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Empty("embedding matrix has no rows"));
        }
        if dim == 0 {
            return Err(Error::Empty("embedding matrix has zero dimension"));
        }
        let values = Matrix::from_vec(rows, dim, data)?;
        Self::from_matrix(values)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("embedding matrix has no rows"));
        }
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn from_matrix(values: Matrix<T>) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Empty("embedding matrix must be at least 1x1"));
        }
        for r in 0..values.rows() {
            if let Some(c) = values.row(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        let normalized = (0..values.rows()).all(|r| row_is_unit(values.row(r)));
        Ok(EmbeddingMatrix { values, ids: None, normalized })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!("{} ids for {} rows", ids.len(), self.rows())));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, r: usize) -> &[T] {
        self.values.row(r)
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn as_slice(&self) -> &[T] {
        self.values.as_slice()
    }

    /// Errors with the first offending row when the matrix is not unit-norm.
    pub fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            return Ok(());
        }
        for r in 0..self.rows() {
            let norm = l2_norm(self.row(r)).as_f64();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row: r, norm });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        let data = self.values.as_slice().iter().map(|v| U::of(v.as_f64())).collect();
        EmbeddingMatrix {
            values: Matrix::from_vec(self.rows(), self.dim(), data).expect("same shape"),
            ids: self.ids.clone(),
            normalized: self.normalized,
        }
    }

    /// Rows selected by index, in the given order. Ids follow their rows.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::invalid(format!("row {i} out of range 0..{}", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.dim(), data)?;
        if let Some(ids) = &self.ids {
            out.ids = Some(indices.iter().map(|&i| ids[i].clone()).collect());
        }
        Ok(out)
    }

    /// Vertical concatenation; ids are kept only when both sides carry them.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!("{} vs {}", self.dim(), other.dim())));
        }
        let mut data = self.values.as_slice().to_vec();
        data.extend_from_slice(other.values.as_slice());
        let mut out = Self::new(self.rows() + other.rows(), self.dim(), data)?;
        if let (Some(a), Some(b)) = (&self.ids, &other.ids) {
            out.ids = Some(a.iter().chain(b).cloned().collect());
        }
        Ok(out)
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut values = self.values.clone();
        for r in 0..values.rows() {
            let row = values.row_mut(r);
            let norm = l2_norm(row);
            if norm == T::zero() {
                return Err(Error::ZeroNormRow(r));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let mut out = Self::from_matrix(values)?;
        out.ids = self.ids.clone();
        Ok(out)
    }
}

fn row_is_unit<T: Scalar>(row: &[T]) -> bool {
    (l2_norm(row).as_f64() - 1.0).abs() <= NORM_TOLERANCE
}

/// Entry (i, j) is `dot(a_i, b_j)`; both inputs must be unit-norm.
pub fn cosine_similarity_matrix<T: Scalar>(a: &EmbeddingMatrix<T>, b: &EmbeddingMatrix<T>) -> Result<Matrix<T>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("dim {} vs {}", a.dim(), b.dim())));
    }
    a.require_normalized()?;
    b.require_normalized()?;
    Ok(dot_products(a.matrix(), b.matrix()))
}

/// Unchecked `A·Bᵀ`.
pub fn dot_products<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            out.set(i, j, dot(ai, b.row(j)));
        }
    }
    out
}
