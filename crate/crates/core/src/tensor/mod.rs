//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Graphs are built dynamically on every forward pass. A [`Var`] is a
//! reference-counted node holding its value, an optional gradient buffer and
//! the operation that produced it. Calling [`Var::backward`] on a scalar walks
//! the graph in reverse topological order and accumulates gradients into every
//! reachable leaf that requires them.
//!
//! Everything is generic over [`Real`] so the same kernels run in `f32` for
//! training and inference and in `f64` when verifying gradients.

pub mod gradcheck;
mod graph;
mod lstm;
mod ops;
mod stft;

use std::fmt::{Debug, Display};

use num_traits::Float;
use rustfft::FftNum;
use thiserror::Error;

pub use graph::{grad_enabled, no_grad, Var};
pub use lstm::{lstm_sequence, lstm_step, LstmWeights};
pub use stft::{hann_window, stft, StftParams};

/// Floor applied before taking logarithms and to spectral magnitudes.
pub const LOG_EPS: f64 = 1e-8;

/// Scalar element type of a tensor.
pub trait Real: Float + FftNum + Default + Debug + Display + Send + Sync + 'static {
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid { op, msg: msg.into() }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::BadLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let data = vec![T::default(); numel(&shape)];
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Tensor { shape, data }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(TensorError::BadLength { shape, len: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }
}

impl<T: Real> Tensor<T> {
    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
