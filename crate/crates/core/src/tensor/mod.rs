//! Dense row-major tensors and the TNSR container.

mod scalar;
pub mod tnsr;

pub use scalar::{gemm, DType, Scalar};

use crate::error::{Error, Result};

/// Dense row-major n-dimensional array with an optional gradient slot.
///
/// `grad` is present iff the tensor was created with `requires_grad`; it
/// always has the same extent as `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} values but data has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Construct without validation. Callers guarantee `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![v; n])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor::from_parts(shape, (0..n).map(&mut f).collect())
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_parts(vec![1], vec![v])
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Attach a zeroed gradient accumulator.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Split into value and gradient buffers for in-place optimizer updates.
    pub fn value_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        let acc = self
            .grad
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("tensor does not require grad".into()))?;
        if acc.len() != g.len() {
            return Err(Error::shape("grad", acc.len(), g.len()));
        }
        acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the largest element in each row of a 2D tensor, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let cols = *self.shape.last().unwrap_or(&1);
        self.data
            .chunks(cols)
            .map(|row| argmax(row.iter().copied()))
            .collect()
    }
}

/// Position of the first maximal element; 0 for an empty iterator.
pub fn argmax<T: PartialOrd>(it: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in it.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}
