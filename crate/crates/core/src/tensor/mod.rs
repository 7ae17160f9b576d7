//! Dense n-mode tensors.
//!
//! [`DenseTensor`] stores its scalars contiguously in row-major order (last
//! mode fastest). Values are immutable once built: every operation returns a
//! fresh tensor, so tensors can be shared freely across threads.
//!
//! Axes are numbered from zero; "mode-1" in the usual tensor notation is
//! axis `0` here.

mod ops;
mod rearrange;

pub(crate) use ops::slice_index as slice_gather_index;
pub use ops::{broadcast_shape, TopK};
pub(crate) use rearrange::permute_plan as rearrange_permute_plan;
pub use rearrange::{RearrangePlan, Rearrangement};

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, WeaverError};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if let Some(&bad) = shape.iter().find(|&&s| s == 0) {
            return Err(WeaverError::InvalidTensor(format!(
                "mode sizes must be positive, found {bad} in {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(WeaverError::InvalidTensor(format!(
                "shape {shape:?} holds {numel} scalars but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&s| s > 0), "zero-sized mode in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        assert!(shape.iter().all(|&s| s > 0), "zero-sized mode in {shape:?}");
        let numel: usize = shape.iter().product();
        let mut index = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f(&index));
            increment_index(&mut index, shape);
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(
            &[n, n],
            |ix| if ix[0] == ix[1] { T::one() } else { T::zero() },
        )
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(&[rows.len(), cols], data).expect("well-formed rows")
    }

    pub fn vector(values: &[T]) -> Self {
        Self::from_vec(&[values.len()], values.to_vec()).expect("non-empty vector")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| {
            assert!(i < s, "index {index:?} out of bounds for {:?}", self.shape);
            acc * s + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(WeaverError::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(WeaverError::shape(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add_scalar(&self, value: T) -> Self {
        self.map(|x| x + value)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Largest elementwise absolute difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(WeaverError::shape(
                "max_abs_diff",
                &self.shape,
                &other.shape,
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Gathers `self.data[index[i]]` into a tensor of `shape`.
    pub fn gather(&self, shape: &[usize], index: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(WeaverError::InvalidTensor(format!(
                "gather: {} indices for output shape {shape:?}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= self.data.len()) {
            return Err(WeaverError::InvalidTensor(format!(
                "gather: source index {bad} out of range {}",
                self.data.len()
            )));
        }
        Self::from_vec(shape, index.iter().map(|&i| self.data[i]).collect())
    }

    /// Adjoint of [`gather`](Self::gather): accumulates `self` into a
    /// zero tensor of `source_shape` at the gathered positions.
    pub fn scatter_add(&self, source_shape: &[usize], index: &[usize]) -> Result<Self> {
        if index.len() != self.numel() {
            return Err(WeaverError::InvalidTensor(format!(
                "scatter_add: {} indices for {} values",
                index.len(),
                self.numel()
            )));
        }
        let mut out = Self::zeros(source_shape);
        for (&i, &v) in index.iter().zip(&self.data) {
            out.data[i] += v;
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Scalar> fmt::Debug for DenseTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "DenseTensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Advances a row-major multi-index by one position.
pub(crate) fn increment_index(index: &mut [usize], shape: &[usize]) {
    for axis in (0..shape.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return;
        }
        index[axis] = 0;
    }
}

/// Shared, cheaply clonable index map used by gather-style primitives.
pub type IndexMap = Arc<[usize]>;
