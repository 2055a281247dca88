use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected layer `y = W x + b` over `[N, in]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LinearTape {
    input: Tensor,
}

impl Linear {
    /// Weights drawn `N(0, 1/in)`.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            weight: Tensor::from_vec(&[outputs, inputs], w).expect("sized"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LinearTape)> {
        let (fin, fout) = (self.inputs(), self.outputs());
        let &[n, d] = input.shape() else {
            return Err(Error::shape(format!(
                "linear expects [N, D], got {:?}",
                input.shape()
            )));
        };
        if d != fin {
            return Err(Error::shape(format!(
                "linear expects {fin} features, got {d}"
            )));
        }
        let mut out = Tensor::zeros(&[n, fout]);
        let (x, w, b) = (input.data(), self.weight.data(), self.bias.data());
        for s in 0..n {
            let xs = &x[s * fin..][..fin];
            for o in 0..fout {
                let row = &w[o * fin..][..fin];
                out.data_mut()[s * fout + o] =
                    b[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        debug_assert!(out.all_finite(), "linear produced a non-finite value");
        Ok((
            out,
            LinearTape {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&mut self, tape: &LinearTape, grad_out: &Tensor) -> Result<Tensor> {
        let (fin, fout) = (self.inputs(), self.outputs());
        let n = tape.input.shape()[0];
        if grad_out.shape() != [n, fout] {
            return Err(Error::shape("linear grad shape mismatch"));
        }
        let x = tape.input.data();
        let g = grad_out.data();
        let mut dw = vec![0.0; fout * fin];
        let mut db = vec![0.0; fout];
        let mut dx = Tensor::zeros(&[n, fin]);
        let w = self.weight.data();
        for s in 0..n {
            let xs = &x[s * fin..][..fin];
            let dxs = &mut dx.data_mut()[s * fin..][..fin];
            for o in 0..fout {
                let go = g[s * fout + o];
                if go == 0.0 {
                    continue;
                }
                db[o] += go;
                let row = &w[o * fin..][..fin];
                let drow = &mut dw[o * fin..][..fin];
                for i in 0..fin {
                    drow[i] += go * xs[i];
                    dxs[i] += go * row[i];
                }
            }
        }
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Ok(dx)
    }
}
