//! Dense row-major tensor of rank 1 to 3, `f64` only.

use crate::{Error, Result};

/// Row-major tensor. Rank is 1, 2 or 3; shape is immutable after
/// construction. The data buffer never contains NaN or infinities when
/// built through [`Tensor::from_vec`]; operations in this crate preserve
/// finiteness for finite inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            (1..=3).contains(&shape.len()) && shape.iter().all(|&d| d > 0),
            "tensor rank must be 1..=3 with positive dims, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// Builds a tensor from a flat row-major buffer. Rejects shape/len
    /// mismatch and non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&shape.len()) || shape.iter().any(|&d| d == 0) {
            return Err(Error::numeric(format!("bad tensor shape {shape:?}")));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::numeric(format!(
                "shape {shape:?} wants {expect} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite value {v} in tensor data")));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the buffer under a new shape of identical length.
    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        let expect: usize = shape.iter().product();
        assert_eq!(expect, self.data.len(), "reshape {:?} -> {shape:?}", self.shape);
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}
