use super::{Mode, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch normalization over `[N, C, H, W]` activations.
///
/// Training mode normalizes with the (biased) batch statistics and updates
/// the running mean and unbiased variance with `momentum`; evaluation mode
/// uses the running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormTape {
    shape: [usize; 4],
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormTape)> {
        let &[n, c, h, w] = input.shape() else {
            return Err(Error::shape(format!(
                "batchnorm expects [N,C,H,W], got {:?}",
                input.shape()
            )));
        };
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm has {} channels, input {c}",
                self.channels()
            )));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::arg(
                "batchnorm in training mode needs a batch of at least 2",
            ));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let x = input.data();
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = Tensor::zeros(input.shape());
        for ch in 0..c {
            let plane = |s: usize| &x[(s * c + ch) * hw..][..hw];
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = (0..n).map(|s| plane(s).iter().sum::<f64>()).sum::<f64>() / count;
                    let ss: f64 = (0..n)
                        .map(|s| {
                            plane(s)
                                .iter()
                                .map(|v| (v - mean) * (v - mean))
                                .sum::<f64>()
                        })
                        .sum();
                    let var = ss / count;
                    let unbiased = if count > 1.0 { ss / (count - 1.0) } else { var };
                    let m = self.momentum;
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean) * is;
                    x_hat[i] = xh;
                    out.data_mut()[i] = g * xh + b;
                }
            }
        }
        debug_assert!(out.all_finite(), "batchnorm produced a non-finite value");
        Ok((
            out,
            BatchNormTape {
                shape: [n, c, h, w],
                x_hat,
                inv_std,
                mode,
            },
        ))
    }

    pub fn backward(&mut self, tape: &BatchNormTape, grad_out: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = tape.shape;
        if grad_out.shape() != tape.shape {
            return Err(Error::shape("batchnorm grad shape mismatch"));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let dy = grad_out.data();
        let mut dx = Tensor::zeros(&tape.shape);
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let idx = |s: usize| (s * c + ch) * hw;
            let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
            for s in 0..n {
                for i in idx(s)..idx(s) + hw {
                    sum_dy += dy[i];
                    sum_dy_xh += dy[i] * tape.x_hat[i];
                }
            }
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            let g = self.gamma.data()[ch];
            let is = tape.inv_std[ch];
            for s in 0..n {
                for i in idx(s)..idx(s) + hw {
                    dx.data_mut()[i] = match tape.mode {
                        Mode::Train => {
                            g * is / count * (count * dy[i] - sum_dy - tape.x_hat[i] * sum_dy_xh)
                        }
                        Mode::Eval => g * is * dy[i],
                    };
                }
            }
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = crate::rng::stream(1, "bn");
        let data: Vec<f64> = (0..4 * 3 * 2 * 5)
            .map(|_| rng.random_range(-3.0..5.0))
            .collect();
        let x = Tensor::from_vec(&[4, 3, 2, 5], data).unwrap();
        let mut bn = BatchNorm2d::new(3, 0.0, 0.1);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 10..][..10].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert!(bn.running_var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, 6.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 4.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn training_needs_two_samples() {
        let mut bn = BatchNorm2d::new(2, 1e-5, 0.1);
        let x = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
