//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Covers exactly the operations the network needs: batched matmul, softmax,
//! layer norm, 2-D convolution, leaky ReLU, pixel shuffle, L1 loss, and the
//! shape plumbing (reshape/permute) to move between light-field and EPI
//! layouts. Forward values are computed eagerly; a [`Tape`] records every
//! operation so [`Tape::backward`] can replay the chain rule in reverse.
//!
//! Precision is a type parameter: `f32` for training and inference, `f64`
//! for finite-difference gradient checks.

pub mod gradcheck;
mod tape;

pub use tape::{Gradients, Padding, Tape, ValueId};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("data length {got} does not match shape product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("{op}: rank must be at least {need}, got shape {shape:?}")]
    BadRank { op: &'static str, need: usize, shape: Vec<usize> },
    #[error("pixel_shuffle: channel extent {channels} not divisible by {factor}^2")]
    NotDivisible { channels: usize, factor: usize },
    #[error("permute: {axes:?} is not a permutation of 0..{rank}")]
    BadAxes { axes: Vec<usize>, rank: usize },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: produced a non-finite value (divergence diagnostic)")]
    NonFinite { op: &'static str },
    #[error("conv2d: same-padding requires odd kernel extents, got {kh}x{kw}")]
    EvenSamePadding { kh: usize, kw: usize },
}

/// Floating-point element type of the engine.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            fn to_f32(self) -> f32 {
                self as f32
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Immutable dense tensor; clones share the underlying buffer.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength { expected, got: data.len() });
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: Arc::new(vec![T::ZERO; n]) }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: Vec::new(), data: Arc::new(vec![v]) }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(i)).collect();
        Self { shape, data: Arc::new(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable element access with copy-on-write semantics: if the buffer is
    /// shared with another tensor, it is cloned first.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Scalar extraction; panics on non-scalar tensors.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(TensorError::DataLength { expected, got: self.numel() });
        }
        Ok(Self { shape, data: Arc::clone(&self.data) })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32()).collect()
    }

    pub fn from_f32_slice(shape: Vec<usize>, values: &[f32]) -> Result<Self, TensorError> {
        Self::new(shape, values.iter().map(|&v| T::from_f32(v)).collect())
    }
}

impl<T: Scalar> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}
