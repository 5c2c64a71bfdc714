use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense n-dimensional array of `f32` with an optional gradient slot of the
/// same shape. All network parameters and activations are carried by this
/// type; layout is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Param(format!("zero extent in shape {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::Param(format!(
                "shape {shape:?} wants {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Gaussian init with mean 0, used for all weight matrices and kernels.
    pub fn randn(shape: &[usize], std: f32, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f64, std as f64).expect("std must be positive");
        let data = (0..n).map(|_| dist.sample(rng) as f32).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Mutable values together with the current gradient, for optimizer
    /// updates. Panics if the gradient slot was never allocated.
    pub fn data_grad_mut(&mut self) -> (&mut [f32], &[f32]) {
        let Tensor { data, grad, .. } = self;
        (data.as_mut_slice(), grad.as_deref().expect("gradient slot not allocated"))
    }

    /// Gradient slot, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Zeroes the gradient slot. Training always resets before an optimizer
    /// step; accumulation across backward calls is otherwise allowed.
    pub fn reset_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_numel() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_slot_matches_shape() {
        let mut t = Tensor::zeros(&[3, 4]);
        assert!(t.grad().is_none());
        t.grad_mut()[5] = 1.5;
        assert_eq!(t.grad().unwrap().len(), t.numel());
        t.reset_grad();
        assert!(t.grad().unwrap().iter().all(|&v| v == 0.0));
    }
}
