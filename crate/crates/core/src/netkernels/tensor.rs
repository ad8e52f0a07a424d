//! Minimal dense row-major tensor.

use crate::error::{Error, Result};

/// Row-major f64 tensor; the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape:?} ({expected})",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Index a 5D tensor as (n, c, t, y, x).
    pub fn at5(&self, n: usize, c: usize, t: usize, y: usize, x: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 5);
        let (d1, d2, d3, d4) = (self.shape[1], self.shape[2], self.shape[3], self.shape[4]);
        self.data[(((n * d1 + c) * d2 + t) * d3 + y) * d4 + x]
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Tensor {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Fill with deterministic pseudo-random values in [-0.5, 0.5].
    pub fn fill_random(&mut self, rng: &mut impl rand::Rng) {
        self.data
            .iter_mut()
            .for_each(|v| *v = rng.random::<f64>() - 0.5);
    }
}
