//! Dense row-major tensors (rank 0..=2 in practice).

use std::sync::Arc;

use crate::scalar::Scalar;

use super::AdError;

/// Dense tensor with shared storage. Cloning is cheap (`Arc` bump), which
/// lets model parameters be re-inserted into a fresh tape every sample
/// without copying the data.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AdError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(AdError::BadShape {
                op: "new",
                detail: format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            });
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); n]) }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![v; n]) }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: T) -> Self {
        Self { shape: Vec::new(), data: Arc::new(vec![v]) }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data: Arc::new(data) }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, AdError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, AdError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(AdError::BadShape {
                    op: "from_rows",
                    detail: format!("ragged rows: {} vs {}", row.len(), c),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row/column view of the shape: rank 0 => (1,1), rank 1 => (1,n).
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("tensors above rank 2 are not used"),
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies only if the storage is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        let v: &mut Vec<T> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// The single value of a rank-0 / single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        let (_, cols) = self.rows_cols();
        self.data[r * cols + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squared entries, accumulated in f64 for stability.
    pub fn sq_sum_f64(&self) -> f64 {
        self.data.iter().map(|v| { let x = v.as_f64(); x * x }).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    /// Max absolute element-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}
