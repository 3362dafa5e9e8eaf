use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::invalid(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Shape as `[N, C, H, W]`, or an error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(CoreError::invalid(
                op,
                format!("expected a rank-4 tensor, got shape {other:?}"),
            )),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                expected: self.shape.clone(),
                actual: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Returns a copy without the gradient buffer.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape(), op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            grad: None,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &Self, s: T) -> Result<()> {
        self.expect_shape(other.shape(), "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel().max(1)).unwrap()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape(), "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite(what.to_string()))
        }
    }

    pub fn expect_shape(&self, shape: &[usize], op: &'static str) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                op,
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            })
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            grad: None,
        }
    }

    /// Concatenates rank-≥1 tensors along the leading axis.
    pub fn stack_batches(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::invalid("stack_batches", "no tensors"))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(CoreError::ShapeMismatch {
                    op: "stack_batches",
                    expected: first.shape.clone(),
                    actual: p.shape.clone(),
                });
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(tail);
        Tensor::new(&shape, data)
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| CoreError::invalid("slice_batch", "scalar tensor"))?;
        if start > end || end > n {
            return Err(CoreError::invalid(
                "slice_batch",
                format!("range {start}..{end} out of 0..{n}"),
            ));
        }
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(&shape, self.data[start * per..end * per].to_vec())
    }
}
