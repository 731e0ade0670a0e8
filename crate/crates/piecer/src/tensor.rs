//! Dense f64 tensors with row-major storage.
//!
//! Tensors are value-semantic: cloning copies the data, and a tensor can be
//! moved freely between threads. Gradients live in an optional companion
//! buffer of the same length, filled in by [`crate::autodiff::ComputeGraph::backward`].
//!
//! Everything in this crate is 64-bit: gradient checking against central
//! finite differences at 1e-5 relative tolerance is not feasible in f32.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: shape {shape:?} does not hold {len} values")]
    BadShape { op: &'static str, shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("softmax row {row} has no unmasked entries")]
    DegenerateSoftmax { row: usize },
    #[error("{0}")]
    Contract(String),
}

/// Constructs a contract-violation error from a format string.
pub fn contract_error(msg: impl Into<String>) -> TensorError {
    TensorError::Contract(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// A tensor from an explicit shape and row-major values. Shapes have one
    /// or two axes; a 1-axis shape `[n]` behaves as a `1 x n` row.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::BadShape { op: "new", shape, len: values.len() });
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(TensorError::BadShape { op: "new", shape, len: values.len() });
        }
        let t = Tensor { shape, values, requires_grad: false, grad: None };
        t.check_finite("new")?;
        Ok(t)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn row(values: Vec<f64>) -> Result<Self, TensorError> {
        let n = values.len();
        Tensor::new(vec![1, n], values)
    }

    pub fn column(values: Vec<f64>) -> Result<Self, TensorError> {
        let n = values.len();
        Tensor::new(vec![n, 1], values)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1, 1], vec![v]).expect("scalar is always well formed")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], values: vec![0.0; rows * cols], requires_grad: false, grad: None }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { shape: vec![rows, cols], values: vec![v; rows * cols], requires_grad: false, grad: None }
    }

    /// Marks the tensor as a trainable leaf for autodiff.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// `(rows, cols)` view; a 1-axis tensor counts as a single row.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("shapes are validated at construction"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims();
        self.values[row * c + col]
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            debug_assert_eq!(g.len(), self.values.len());
        }
        self.grad = grad;
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_value_count() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::BadShape { .. }));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let err = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn one_axis_behaves_as_row() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.dims(), (1, 3));
        assert_eq!(t.at(0, 2), 3.0);
    }

    #[test]
    fn tensors_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Tensor>();
    }

    #[test]
    fn grad_companion_tracks_length() {
        let mut t = Tensor::zeros(2, 2).with_grad();
        assert!(t.requires_grad());
        assert!(t.grad().is_none());
        t.set_grad(Some(vec![1.0; 4]));
        assert_eq!(t.grad().unwrap().len(), t.len());
    }
}
