//! Row-major `f64` tensors.
//!
//! This is deliberately minimal: dense rectangular storage plus the handful
//! of bulk operations the optimizers and gradient code need. Everything is
//! 64-bit; the meta-gradient is a product of three gradient factors and the
//! finite-difference suites need the precision headroom.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `shape` accounts for every element and
    /// that all entries are finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("tensor contains non-finite entries"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.shape.clone())
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

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// `self += c * other`. Shapes must match.
    pub fn axpy(&mut self, c: f64, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    /// Flat inner product.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Inner product across an aligned list of tensors (a "flat" parameter dot).
pub fn dot_all(a: &[Tensor], b: &[Tensor]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x.dot(y)).sum()
}

/// Squared norm of a tensor list.
pub fn sq_norm_all(ts: &[Tensor]) -> f64 {
    ts.iter().map(Tensor::sq_norm).sum()
}

/// `dst += c * src`, elementwise over aligned tensor lists.
pub fn axpy_all(dst: &mut [Tensor], c: f64, src: &[Tensor]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        d.axpy(c, s);
    }
}

pub fn zeros_like_all(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(Tensor::zeros_like).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_shape_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.5; 4]).is_ok());
    }

    #[test]
    fn axpy_and_dot() {
        let mut a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        a.axpy(0.5, &b);
        assert_eq!(a.data(), &[6.0, 12.0, 18.0]);
        assert_eq!(a.dot(&b), 6.0 * 10.0 + 12.0 * 20.0 + 18.0 * 30.0);
    }
}
