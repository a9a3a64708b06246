use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense N-dimensional f64 array with an optional gradient accumulator of
/// the same shape. Parameters carry gradients; intermediate values do not.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::invalid(format!(
                "tensor: {} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len], grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v], grad: None }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; len], grad: None }
    }

    /// Centered uniform init scaled by 1/sqrt(fan_in).
    pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape: shape.to_vec(), data, grad: None }
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

    /// Scalar value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn accumulate_grad(&mut self, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.data.len());
        match &mut self.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => self.grad = Some(grad.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_grad_accounting() {
        let mut t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0; 6]);
        t.accumulate_grad(&[0.5; 6]);
        assert_eq!(t.grad().unwrap()[3], 1.5);
        t.zero_grad();
        assert!(t.grad().is_none());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = crate::seed::rng(1, &[0]);
        let t = Tensor::uniform_init(&[64], 16, &mut rng);
        let bound = 0.25;
        assert!(t.data().iter().all(|&v| v.abs() < bound));
        assert!(t.data().iter().any(|&v| v.abs() > bound / 4.0));
    }
}
