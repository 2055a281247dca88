use super::Tensor;
use crate::error::{Error, Result};

/// `v` if `v >= 0`, else `slope * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyRelu {
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct LeakyReluTape {
    shape: Vec<usize>,
    negative: Vec<bool>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if v >= 0.0 {
            v
        } else {
            self.slope * v
        }
    }

    pub fn forward(&self, input: &Tensor) -> (Tensor, LeakyReluTape) {
        let negative: Vec<bool> = input.data().iter().map(|&v| v < 0.0).collect();
        let data = input.data().iter().map(|&v| self.apply(v)).collect();
        (
            Tensor::from_vec(input.shape(), data).expect("same shape"),
            LeakyReluTape {
                shape: input.shape().to_vec(),
                negative,
            },
        )
    }

    pub fn backward(&self, tape: &LeakyReluTape, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != tape.shape.as_slice() {
            return Err(Error::shape("leaky relu grad shape mismatch"));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&tape.negative)
            .map(|(&g, &neg)| if neg { self.slope * g } else { g })
            .collect();
        Tensor::from_vec(&tape.shape, data)
    }
}
