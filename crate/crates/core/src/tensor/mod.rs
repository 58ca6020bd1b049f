//! Minimal dense tensor engine.
//!
//! Row-major `f32` storage with the fixed op set needed by spiking conv
//! nets: im2col convolution, max pooling, batch normalization, a linear
//! layer, and elementwise arithmetic. Spike trains use the layout
//! `[T, B, C, H, W]` with time outermost, so each per-timestep slice is a
//! contiguous `[B, C, H, W]` block.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::{conv2d, conv2d_with, linearity_check, ConvSpec};
pub use norm::{batchnorm, BatchNormState, BnMode, BN_EPSILON};
pub use pool::maxpool2d;

pub(crate) use conv::{conv2d_backward, im2col, Im2ColShape};
pub(crate) use linear::{linear, linear_backward};
pub(crate) use norm::{batchnorm_backward, batchnorm_train_stats};
pub(crate) use pool::{maxpool2d_backward, maxpool2d_with_argmax};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements but data has {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: expected {expected} {dim}, got {actual}")]
    DimMismatch {
        context: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        context: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{context}: non-finite value at flat index {index}")]
    NonFinite { context: &'static str, index: usize },
    #[error("{context}: spatial extent {extent} not divisible by {divisor}")]
    NotDivisible {
        context: &'static str,
        extent: usize,
        divisor: usize,
    },
    #[error("convolution output extent would be {computed} for input extent {input} (kernel {kernel}, stride {stride}, padding {padding})")]
    EmptyOutput {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        computed: isize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major tensor of 32-bit floats.
///
/// `grad`, when allocated, always has the same length as `data`; it is
/// populated by [`crate::tape::Tape::backward`] for parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    #[serde(skip)]
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Reinterpret the flat data under a new shape with the same length.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<(), TensorError> {
        match self.first_non_finite() {
            Some(index) => Err(TensorError::NonFinite { context, index }),
            None => Ok(()),
        }
    }

    pub fn expect_rank(&self, rank: usize, context: &'static str) -> Result<(), TensorError> {
        if self.shape.len() != rank {
            return Err(TensorError::RankMismatch {
                context,
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Extents of a rank-4 tensor as `(batch, channels, height, width)`.
    pub fn dims4(&self, context: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        self.expect_rank(4, context)?;
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise `self * other`.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map<F: Fn(f32) -> f32>(&self, f: F) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// `alpha * self + other`, the membrane-update primitive.
    pub fn axpy(&self, alpha: f32, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "axpy", |a, b| alpha * a + b)
    }

    /// In-place `self += alpha * other`.
    pub fn accumulate(&mut self, alpha: f32, other: &Tensor) -> Result<(), TensorError> {
        self.check_same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    fn zip_with<F: Fn(f32, f32) -> f32>(
        &self,
        other: &Tensor,
        context: &'static str,
        f: F,
    ) -> Result<Tensor, TensorError> {
        self.check_same_shape(other, context)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
        })
    }

    pub fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Invalid(format!(
                "{context}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
