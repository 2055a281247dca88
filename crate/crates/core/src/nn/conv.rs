//! 2D cross-correlation with zero padding and stride, via im2col + GEMM.
//!
//! `out[f, i, j] = b[f] + sum_{c,u,v} k[f, c, u, v] * in[c, i*sh + u - ph, j*sw + v - pw]`,
//! with no kernel flip.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    padding: (usize, usize),
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        input: &[usize],
        weight: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let (&[batch, channels, height, width], &[filters, kc, kh, kw]) = (input, weight) else {
            return Err(Error::shape(format!(
                "conv expects [N,C,H,W] input and [F,C,KH,KW] kernels, got {input:?} and {weight:?}"
            )));
        };
        if kc != channels {
            return Err(Error::shape(format!(
                "kernel has {kc} channels, input has {channels}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || kh == 0 || kw == 0 {
            return Err(Error::arg("conv needs positive stride and kernel size"));
        }
        let ph = height + 2 * padding.0;
        let pw = width + 2 * padding.1;
        if ph < kh || pw < kw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride.0 + 1,
            out_w: (pw - kw) / stride.1 + 1,
        })
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Input coordinate read by output `(oh, ow)` at kernel tap `(u, v)`.
    #[inline]
    fn source(&self, oh: usize, ow: usize, u: usize, v: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride.0 + u).checked_sub(self.padding.0)?;
        let x = (ow * self.stride.1 + v).checked_sub(self.padding.1)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane = &sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = &mut cols[((c * self.kh + u) * self.kw + v) * p..][..p];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            row[oh * self.out_w + ow] = match self.source(oh, ow, u, v) {
                                Some((y, x)) => plane[y * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], sample: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            let plane =
                &mut sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = &cols[((c * self.kh + u) * self.kw + v) * p..][..p];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            if let Some((y, x)) = self.source(oh, ow, u, v) {
                                plane[y * self.width + x] += row[oh * self.out_w + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = a * b (+ c if accumulate)`, row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every index touched is within the slices given the shapes and
    // strides asserted by the callers in this module.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvTape {
    geom: Geometry,
    cols: Vec<f64>,
}

/// Convolution layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[filters, channels, kh, kw]`
    pub weight: Tensor,
    /// `[filters]`
    pub bias: Tensor,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    /// He (fan-in) initialization, zero bias.
    pub fn he_init(
        channels: usize,
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let fan_in = channels * kernel.0 * kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let n = filters * fan_in;
        let w: Vec<f64> = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            weight: Tensor::from_vec(&[filters, channels, kernel.0, kernel.1], w).expect("sized"),
            bias: Tensor::zeros(&[filters]),
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let s = self.weight.shape();
        let g = Geometry::new(&[1, s[1], height, width], s, self.stride, self.padding)?;
        Ok((g.out_h, g.out_w))
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvTape)> {
        let geom = Geometry::new(
            input.shape(),
            self.weight.shape(),
            self.stride,
            self.padding,
        )?;
        let (patch, p, f) = (geom.patch(), geom.positions(), geom.filters);
        let mut cols = vec![0.0; geom.batch * patch * p];
        let mut out = Tensor::zeros(&[geom.batch, f, geom.out_h, geom.out_w]);
        let w = self.weight.data();
        let bias = self.bias.data();
        for n in 0..geom.batch {
            let sample = &input.data()[n * geom.sample_len()..][..geom.sample_len()];
            let c = &mut cols[n * patch * p..][..patch * p];
            geom.im2col(sample, c);
            let o = &mut out.data_mut()[n * f * p..][..f * p];
            for (fi, row) in o.chunks_exact_mut(p).enumerate() {
                row.fill(bias[fi]);
            }
            gemm(
                f,
                patch,
                p,
                w,
                (patch as isize, 1),
                c,
                (p as isize, 1),
                o,
                true,
            );
        }
        debug_assert!(out.all_finite(), "conv2d produced a non-finite value");
        Ok((out, ConvTape { geom, cols }))
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, tape: &ConvTape, grad_out: &Tensor) -> Result<Tensor> {
        let g = tape.geom;
        let expect = [g.batch, g.filters, g.out_h, g.out_w];
        if grad_out.shape() != expect {
            return Err(Error::shape(format!(
                "conv grad {:?}, expected {expect:?}",
                grad_out.shape()
            )));
        }
        let (patch, p, f) = (g.patch(), g.positions(), g.filters);
        let mut dw = vec![0.0; f * patch];
        let mut db = vec![0.0; f];
        let mut dinput = Tensor::zeros(&[g.batch, g.channels, g.height, g.width]);
        let mut dcols = vec![0.0; patch * p];
        let w = self.weight.data();
        for n in 0..g.batch {
            let go = &grad_out.data()[n * f * p..][..f * p];
            let c = &tape.cols[n * patch * p..][..patch * p];
            for (fi, row) in go.chunks_exact(p).enumerate() {
                db[fi] += row.iter().sum::<f64>();
            }
            // dW += dOut [f x p] * cols^T [p x patch]
            gemm(
                f,
                p,
                patch,
                go,
                (p as isize, 1),
                c,
                (1, p as isize),
                &mut dw,
                true,
            );
            // dcols = W^T [patch x f] * dOut [f x p]
            gemm(
                patch,
                f,
                p,
                w,
                (1, patch as isize),
                go,
                (p as isize, 1),
                &mut dcols,
                false,
            );
            let di = &mut dinput.data_mut()[n * g.sample_len()..][..g.sample_len()];
            g.col2im(&dcols, di);
        }
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Ok(dinput)
    }
}

/// Stateless convolution of `input` `[N,C,H,W]` with `kernels` `[F,C,KH,KW]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    if bias.shape() != [kernels.shape().first().copied().unwrap_or(0)] {
        return Err(Error::shape("bias must have one entry per kernel"));
    }
    let layer = Conv2d {
        weight: kernels.clone(),
        bias: bias.clone(),
        stride,
        padding,
    };
    Ok(layer.forward(input)?.0)
}
