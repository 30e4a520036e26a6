//! Dense row-major `f64` tensors: the carrier for parameters, activations and
//! gradients throughout the crate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor from raw data; the data length must equal the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows of a 2-D tensor. Panics on other ranks (internal misuse).
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on non-matrix {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on non-matrix {:?}", self.shape);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Matrix-vector product `self · x` for a 2-D tensor.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.shape.len() != 2 || self.cols() != x.len() {
            return Err(Error::Shape(format!(
                "matvec: matrix {:?} does not accept vector of length {}",
                self.shape,
                x.len()
            )));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Transposed matrix-vector product `selfᵀ · y` for a 2-D tensor.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.shape.len() != 2 || self.rows() != y.len() {
            return Err(Error::Shape(format!(
                "matvec_t: matrix {:?} does not accept vector of length {}",
                self.shape,
                y.len()
            )));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let yi = y[i];
            for (o, w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
        Ok(out)
    }

    /// Rank-one update `self += y xᵀ`; `self` must be `len(y) × len(x)`.
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(self.rows(), y.len(), "add_outer row mismatch");
        assert_eq!(self.cols(), x.len(), "add_outer col mismatch");
        let c = self.cols();
        for (i, yi) in y.iter().enumerate() {
            let row = &mut self.data[i * c..(i + 1) * c];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += yi * xv;
            }
        }
    }

    /// Elementwise `self += d` for a flat slice of matching length.
    pub fn add_slice(&mut self, d: &[f64]) {
        assert_eq!(self.data.len(), d.len(), "add_slice length mismatch");
        for (a, b) in self.data.iter_mut().zip(d) {
            *a += b;
        }
    }

    /// `self += c * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{what}: non-finite entry {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}
