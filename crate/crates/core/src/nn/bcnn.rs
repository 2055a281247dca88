//! The basic CNN: signal-to-image layer, a stack of conv -> batchnorm ->
//! leaky ReLU blocks with 3x3 kernels, and a final fully connected layer.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    BatchNorm2d, BatchNormTape, Conv2d, ConvTape, LeakyRelu, LeakyReluTape, Linear, LinearTape,
    Mode, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::ComplexSignal;

/// Stride schedule for the 16x80 input image.
pub const STANDARD_STRIDES: [(usize, usize); 6] = [(1, 2), (2, 2), (1, 2), (2, 2), (2, 2), (2, 2)];

/// Reshape `r` into a `(2, M/S, S)` image: channel 0 holds real parts,
/// channel 1 imaginary parts, row `i` samples `i*S .. (i+1)*S`.
pub fn signal_to_image(r: &ComplexSignal, width: usize) -> Result<Tensor> {
    let t = images_from_samples(&[r.samples.as_slice()], width)?;
    let s = t.shape().to_vec();
    t.reshape(&s[1..])
}

/// Batched [`signal_to_image`]: `[N, 2, M/S, S]`.
pub fn images_from_samples(batch: &[&[Complex64]], width: usize) -> Result<Tensor> {
    let m = batch.first().map_or(0, |s| s.len());
    if width == 0 || m == 0 || !m.is_multiple_of(width) {
        return Err(Error::arg(format!(
            "image width {width} does not divide signal length {m}"
        )));
    }
    let plane = m;
    let mut data = vec![0.0; batch.len() * 2 * plane];
    for (n, s) in batch.iter().enumerate() {
        if s.len() != m {
            return Err(Error::shape("signals in a batch must share one length"));
        }
        let (re, im) = data[n * 2 * plane..][..2 * plane].split_at_mut(plane);
        for (t, v) in s.iter().enumerate() {
            re[t] = v.re;
            im[t] = v.im;
        }
    }
    Tensor::from_vec(&[batch.len(), 2, m / width, width], data)
}

/// Adjoint of [`images_from_samples`]: fold an image gradient back onto
/// complex samples.
pub fn image_grad_to_samples(grad: &Tensor) -> Result<Vec<Vec<Complex64>>> {
    let &[n, 2, h, w] = grad.shape() else {
        return Err(Error::shape(format!(
            "expected [N,2,H,W] gradient, got {:?}",
            grad.shape()
        )));
    };
    let plane = h * w;
    Ok((0..n)
        .map(|s| {
            let (re, im) = grad.data()[s * 2 * plane..][..2 * plane].split_at(plane);
            re.iter()
                .zip(im)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect()
        })
        .collect())
}

/// Architecture of one BCNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcnnSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Filter-count knob `L`: layer `n` gets `L * min(2^n, 8)` filters.
    pub complexity: usize,
    pub strides: Vec<(usize, usize)>,
    pub output_dim: usize,
    /// Scalar features appended to the flattened conv output.
    pub extra_features: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Initialize the output layer to zero.
    pub zero_head: bool,
}

impl BcnnSpec {
    /// Two-channel image network. A 16x80 image uses [`STANDARD_STRIDES`];
    /// other sizes halve every dimension of size >= 2 and stop as soon as
    /// the feature map is smaller than 3 in some dimension.
    pub fn standard(height: usize, width: usize, complexity: usize, output_dim: usize) -> Self {
        let strides = if (height, width) == (16, 80) {
            STANDARD_STRIDES.to_vec()
        } else {
            let (mut h, mut w) = (height, width);
            let mut s = Vec::new();
            loop {
                let st = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
                h = (h.max(1) - 1) / st.0 + 1;
                w = (w.max(1) - 1) / st.1 + 1;
                s.push(st);
                if h < 3 || w < 3 {
                    break;
                }
            }
            s
        };
        Self {
            in_channels: 2,
            height,
            width,
            complexity,
            strides,
            output_dim,
            extra_features: 0,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            zero_head: false,
        }
    }

    pub fn filters(&self, layer: usize) -> usize {
        self.complexity * (1usize << layer.min(3))
    }

    /// Feature-map sizes after each conv layer (3x3 kernel, padding 1).
    pub fn feature_sizes(&self) -> Result<Vec<(usize, usize)>> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("BCNN input image is empty"));
        }
        let (mut h, mut w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.strides.len());
        for &(sh, sw) in &self.strides {
            if sh == 0 || sw == 0 {
                return Err(Error::arg("BCNN strides must be positive"));
            }
            h = (h - 1) / sh + 1;
            w = (w - 1) / sw + 1;
            out.push((h, w));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.complexity == 0 || self.output_dim == 0 {
            return Err(Error::arg(
                "BCNN needs positive channels, complexity and output size",
            ));
        }
        if self.strides.is_empty() {
            return Err(Error::arg("BCNN needs at least one conv layer"));
        }
        let sizes = self.feature_sizes()?;
        let &(h, w) = sizes.last().expect("non-empty");
        if h == 0 || w == 0 {
            return Err(Error::arg("BCNN conv stack produces an empty feature map"));
        }
        if h >= 3 && w >= 3 {
            return Err(Error::arg(format!(
                "final feature map {h}x{w} still admits another 3x3 convolution"
            )));
        }
        Ok(())
    }

    /// Width of the flattened conv output fed to the fully connected layer.
    pub fn flat_features(&self) -> Result<usize> {
        let sizes = self.feature_sizes()?;
        let &(h, w) = sizes.last().ok_or_else(|| Error::arg("no conv layers"))?;
        Ok(self.filters(self.strides.len() - 1) * h * w)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> Result<usize> {
        let mut total = 0;
        let mut c = self.in_channels;
        for layer in 0..self.strides.len() {
            let f = self.filters(layer);
            total += f * c * 9 + f + 2 * f;
            c = f;
        }
        let fin = self.flat_features()? + self.extra_features;
        Ok(total + fin * self.output_dim + self.output_dim)
    }
}

/// One layer of a BCNN.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    LeakyRelu(LeakyRelu),
    FullyConnected(Linear),
}

#[derive(Debug, Clone)]
enum LayerTape {
    Conv(ConvTape),
    BatchNorm(BatchNormTape),
    LeakyRelu(LeakyReluTape),
    FullyConnected(LinearTape),
}

/// Saved activations of one forward pass.
#[derive(Debug, Clone)]
pub struct BcnnTape {
    tapes: Vec<LayerTape>,
    conv_out_shape: Vec<usize>,
    extra_features: usize,
}

/// A BCNN instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Bcnn {
    spec: BcnnSpec,
    layers: Vec<Layer>,
}

/// Build the layer list for `spec`: conv+BN+LReLU blocks, then one fully
/// connected layer. He initialization for convolutions.
pub fn build_bcnn(spec: &BcnnSpec, rng: &mut Rng) -> Result<Bcnn> {
    spec.validate()?;
    let mut layers = Vec::with_capacity(3 * spec.strides.len() + 1);
    let mut c = spec.in_channels;
    for (i, &stride) in spec.strides.iter().enumerate() {
        let f = spec.filters(i);
        layers.push(Layer::Conv(Conv2d::he_init(
            c,
            f,
            (3, 3),
            stride,
            (1, 1),
            rng,
        )));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(
            f,
            spec.bn_eps,
            spec.bn_momentum,
        )));
        layers.push(Layer::LeakyRelu(LeakyRelu::new(spec.leaky_slope)));
        c = f;
    }
    let fin = spec.flat_features()? + spec.extra_features;
    let head = if spec.zero_head {
        Linear::zeros(fin, spec.output_dim)
    } else {
        Linear::init(fin, spec.output_dim, rng)
    };
    layers.push(Layer::FullyConnected(head));
    Ok(Bcnn {
        spec: spec.clone(),
        layers,
    })
}

impl Bcnn {
    pub fn new(spec: &BcnnSpec, rng: &mut Rng) -> Result<Self> {
        build_bcnn(spec, rng)
    }

    pub fn spec(&self) -> &BcnnSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        match self.layers.last_mut() {
            Some(Layer::FullyConnected(l)) => l,
            _ => unreachable!("a BCNN always ends in a fully connected layer"),
        }
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta]),
                Layer::FullyConnected(f) => out.extend([&f.weight, &f.bias]),
                Layer::LeakyRelu(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::FullyConnected(f) => out.extend([&mut f.weight, &mut f.bias]),
                Layer::LeakyRelu(_) => {}
            }
        }
        out
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&b.running_mean, &b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&mut b.running_mean, &mut b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Run the network on `[N, C, H, W]` images, with `extra` `[N, E]`
    /// appended to the flattened features when the spec asks for it.
    pub fn forward(
        &mut self,
        images: &Tensor,
        extra: Option<&Tensor>,
        mode: Mode,
    ) -> Result<(Tensor, BcnnTape)> {
        let s = &self.spec;
        let expect = [s.in_channels, s.height, s.width];
        if images.shape().len() != 4 || images.shape()[1..] != expect {
            return Err(Error::shape(format!(
                "BCNN expects [N, {}, {}, {}] images, got {:?}",
                s.in_channels,
                s.height,
                s.width,
                images.shape()
            )));
        }
        let n = images.shape()[0];
        let e = s.extra_features;
        match (extra, e) {
            (None, 0) => {}
            (Some(x), e) if e > 0 && x.shape() == [n, e] => {}
            _ => {
                return Err(Error::shape(format!(
                    "BCNN expects {e} extra features per record"
                )))
            }
        }

        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut act = images.clone();
        let mut conv_out_shape = Vec::new();
        for layer in &mut self.layers {
            act = match layer {
                Layer::Conv(c) => {
                    let (y, t) = c.forward(&act)?;
                    tapes.push(LayerTape::Conv(t));
                    y
                }
                Layer::BatchNorm(b) => {
                    let (y, t) = b.forward(&act, mode)?;
                    tapes.push(LayerTape::BatchNorm(t));
                    y
                }
                Layer::LeakyRelu(a) => {
                    let (y, t) = a.forward(&act);
                    tapes.push(LayerTape::LeakyRelu(t));
                    y
                }
                Layer::FullyConnected(f) => {
                    conv_out_shape = act.shape().to_vec();
                    let d: usize = conv_out_shape[1..].iter().product();
                    let mut flat = Vec::with_capacity(n * (d + e));
                    for i in 0..n {
                        flat.extend_from_slice(&act.data()[i * d..][..d]);
                        if let Some(x) = extra {
                            flat.extend_from_slice(&x.data()[i * e..][..e]);
                        }
                    }
                    let flat = Tensor::from_vec(&[n, d + e], flat)?;
                    let (y, t) = f.forward(&flat)?;
                    tapes.push(LayerTape::FullyConnected(t));
                    y
                }
            };
        }
        act.check_finite("bcnn forward")?;
        Ok((
            act,
            BcnnTape {
                tapes,
                conv_out_shape,
                extra_features: e,
            },
        ))
    }

    /// Accumulate parameter gradients for `grad_out` `[N, output_dim]`;
    /// returns the gradients of the images and of the extra features.
    pub fn backward(
        &mut self,
        tape: &BcnnTape,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        if tape.tapes.len() != self.layers.len() {
            return Err(Error::shape("tape does not belong to this network"));
        }
        let mut grad = grad_out.clone();
        let mut extra_grad = None;
        for (layer, t) in self.layers.iter_mut().zip(&tape.tapes).rev() {
            grad = match (layer, t) {
                (Layer::FullyConnected(f), LayerTape::FullyConnected(t)) => {
                    let g = f.backward(t, &grad)?;
                    let n = tape.conv_out_shape[0];
                    let d: usize = tape.conv_out_shape[1..].iter().product();
                    let e = tape.extra_features;
                    let mut conv = Vec::with_capacity(n * d);
                    let mut ex = Vec::with_capacity(n * e);
                    for i in 0..n {
                        let row = &g.data()[i * (d + e)..][..d + e];
                        conv.extend_from_slice(&row[..d]);
                        ex.extend_from_slice(&row[d..]);
                    }
                    if e > 0 {
                        extra_grad = Some(Tensor::from_vec(&[n, e], ex)?);
                    }
                    Tensor::from_vec(&tape.conv_out_shape, conv)?
                }
                (Layer::LeakyRelu(a), LayerTape::LeakyRelu(t)) => a.backward(t, &grad)?,
                (Layer::BatchNorm(b), LayerTape::BatchNorm(t)) => b.backward(t, &grad)?,
                (Layer::Conv(c), LayerTape::Conv(t)) => c.backward(t, &grad)?,
                _ => return Err(Error::shape("tape does not belong to this network")),
            };
        }
        Ok((grad, extra_grad))
    }
}
