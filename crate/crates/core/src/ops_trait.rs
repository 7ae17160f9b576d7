//! The operations shared by plain tensors and tape variables, so kernels can
//! be written once and run either eagerly or under differentiation.

use crate::autodiff::Var;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, IndexMap};

pub trait TensorOps<T: Scalar>: Sized + Clone {
    fn dims(&self) -> Vec<usize>;
    fn reshape(&self, shape: &[usize]) -> Result<Self>;
    fn rearrange(&self, pattern: &str, sizes: &[(&str, usize)]) -> Result<Self>;
    fn permute(&self, axes: &[usize]) -> Result<Self>;
    /// `out.data[i] = self.data[index[i]]` with output `shape`.
    fn gather(&self, shape: &[usize], index: &IndexMap) -> Result<Self>;
    fn batched_matmul(&self, b: &Self, transpose_b: bool) -> Result<Self>;
    fn add(&self, other: &Self) -> Result<Self>;
    fn sub(&self, other: &Self) -> Result<Self>;
    fn mul(&self, other: &Self) -> Result<Self>;
    fn div(&self, other: &Self) -> Result<Self>;
    fn scale(&self, c: T) -> Self;
    fn add_scalar(&self, c: T) -> Self;
    fn sqrt(&self) -> Self;
    fn mode_sum_keep(&self, axis: usize) -> Result<Self>;
    fn broadcast_to(&self, shape: &[usize]) -> Result<Self>;
}

impl<T: Scalar> TensorOps<T> for DenseTensor<T> {
    fn dims(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        DenseTensor::reshape(self, shape)
    }
    fn rearrange(&self, pattern: &str, sizes: &[(&str, usize)]) -> Result<Self> {
        DenseTensor::rearrange(self, pattern, sizes)
    }
    fn permute(&self, axes: &[usize]) -> Result<Self> {
        DenseTensor::permute(self, axes)
    }
    fn gather(&self, shape: &[usize], index: &IndexMap) -> Result<Self> {
        DenseTensor::gather(self, shape, index)
    }
    fn batched_matmul(&self, b: &Self, transpose_b: bool) -> Result<Self> {
        DenseTensor::batched_matmul(self, b, transpose_b)
    }
    fn add(&self, other: &Self) -> Result<Self> {
        DenseTensor::add(self, other)
    }
    fn sub(&self, other: &Self) -> Result<Self> {
        DenseTensor::sub(self, other)
    }
    fn mul(&self, other: &Self) -> Result<Self> {
        DenseTensor::mul(self, other)
    }
    fn div(&self, other: &Self) -> Result<Self> {
        DenseTensor::div(self, other)
    }
    fn scale(&self, c: T) -> Self {
        DenseTensor::scale(self, c)
    }
    fn add_scalar(&self, c: T) -> Self {
        DenseTensor::add_scalar(self, c)
    }
    fn sqrt(&self) -> Self {
        self.map(T::sqrt)
    }
    fn mode_sum_keep(&self, axis: usize) -> Result<Self> {
        DenseTensor::mode_sum_keep(self, axis)
    }
    fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        DenseTensor::broadcast_to(self, shape)
    }
}

impl<'t, T: Scalar> TensorOps<T> for Var<'t, T> {
    fn dims(&self) -> Vec<usize> {
        self.shape()
    }
    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Var::reshape(self, shape)
    }
    fn rearrange(&self, pattern: &str, sizes: &[(&str, usize)]) -> Result<Self> {
        Var::rearrange(self, pattern, sizes)
    }
    fn permute(&self, axes: &[usize]) -> Result<Self> {
        Var::permute(self, axes)
    }
    fn gather(&self, shape: &[usize], index: &IndexMap) -> Result<Self> {
        Var::gather(self, shape, index.clone())
    }
    fn batched_matmul(&self, b: &Self, transpose_b: bool) -> Result<Self> {
        Var::batched_matmul(self, b, transpose_b)
    }
    fn add(&self, other: &Self) -> Result<Self> {
        Var::add(self, other)
    }
    fn sub(&self, other: &Self) -> Result<Self> {
        Var::sub(self, other)
    }
    fn mul(&self, other: &Self) -> Result<Self> {
        Var::mul(self, other)
    }
    fn div(&self, other: &Self) -> Result<Self> {
        Var::div(self, other)
    }
    fn scale(&self, c: T) -> Self {
        Var::scale(self, c)
    }
    fn add_scalar(&self, c: T) -> Self {
        Var::add_scalar(self, c)
    }
    fn sqrt(&self) -> Self {
        Var::sqrt(self)
    }
    fn mode_sum_keep(&self, axis: usize) -> Result<Self> {
        Var::mode_sum_keep(self, axis)
    }
    fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        Var::broadcast_to(self, shape)
    }
}
