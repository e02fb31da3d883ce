use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense row-major tensor. The leading axis is the batch/time axis for every
/// layer in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) && !values.is_empty() {
            return Err(Error::dim(format!("invalid shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn from_matrix(m: &Array2<f64>) -> Self {
        let (r, c) = m.dim();
        Tensor {
            shape: vec![r, c],
            values: m.iter().copied().collect(),
        }
    }

    /// Views the tensor as `[rows x row_len]`.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows(), self.row_len()), self.values.clone())
            .expect("tensor shape is consistent")
    }

    pub fn into_matrix(self) -> Array2<f64> {
        let (r, c) = (self.rows(), self.row_len());
        Array2::from_shape_vec((r, c), self.values).expect("tensor shape is consistent")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing axes.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
