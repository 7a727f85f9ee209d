//! Dense 64-bit tensors and the define-by-run differentiation tape.
//!
//! A [`Tensor`] is a plain value: a [`Shape`] plus row-major data (last
//! dimension fastest). Values enter a [`Tape`] either as constants
//! ([`Tape::leaf`]) or as trainable parameters ([`Tape::param`]); every
//! operation recorded on the tape returns a [`Var`] handle. Calling
//! [`Tape::backward`] on a scalar `Var` produces [`Gradients`] for every
//! trainable leaf.
//!
//! A tape is rebuilt for every forward pass and is confined to one thread.

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_check_coords, GradCheckReport};
pub use tape::{BackwardOp, Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Ordered list of positive extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("shape needs at least one dimension"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("extent {i} of {dims:?} is zero")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Extents of a 4-D `[N, C, H, W]` shape.
    pub(crate) fn nchw(&self, what: &str) -> Result<[usize; 4]> {
        match self.0.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::shape(format!("{what} expects [N, C, H, W], got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Dense row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from row-major values. Fails when the value count does
    /// not match the shape.
    pub fn from_vec(values: Vec<f64>, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if values.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values cannot fill shape {shape} ({} elements)",
                values.len(),
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data: values,
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::from_vec(self.data, dims)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_preserves_row_major_order() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], [2, 2]).unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn from_vec_rejects_count_mismatch() {
        let err = Tensor::from_vec(vec![1.0, 2.0, 3.0], [2, 2]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn singleton_tensor() {
        let t = Tensor::from_vec(vec![5.0], [1, 1, 1]).unwrap();
        assert_eq!(t.item(), Some(5.0));
    }

    #[test]
    fn shape_rejects_zero_extent_and_overflow() {
        assert!(Shape::new([3, 0]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
        assert!(Shape::new([usize::MAX, 2]).is_err());
    }
}
