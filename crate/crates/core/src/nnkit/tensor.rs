//! Dense f64 tensor with explicit shape. All model arithmetic runs in
//! 64-bit precision so finite-difference checks have headroom.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Contract(format!(
                "tensor data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                expect
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

    /// Element of a rank-3 tensor laid out `[C, H, W]`.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    /// NaN/Inf anywhere is a contract violation; `what` names the tensor in
    /// the error message.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Contract(format!("{what} contains non-finite values")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_shape_mismatch() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rank3_indexing_is_row_major() {
        let mut t = Tensor::zeros(&[2, 2, 3]);
        t.set3(1, 0, 2, 7.0);
        assert_eq!(t.at3(1, 0, 2), 7.0);
        assert_eq!(t.data()[1 * 2 * 3 + 0 * 3 + 2], 7.0);
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.check_finite("x").is_err());
    }
}
