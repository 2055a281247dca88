//! Shared test oracles: central finite differences, a brute-force
//! convolution, and small fixtures.
#![allow(dead_code, clippy::needless_range_loop)]

use nsrff::nn::{build_bcnn, BatchNorm2d, Bcnn, BcnnSpec, Conv2d, LeakyRelu, Linear, Mode, Tensor};
use nsrff::rff::{
    cross_entropy, freq_compensate, freq_compensate_backward, head_backward, head_forward,
    init_classifier, phase_compensate, phase_compensate_backward, Head, ModelConfig, Pipeline,
    Prepared, RffModel,
};
use nsrff::rng::{stream, Rng};
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

/// Worst relative error over the sampled coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub coords: usize,
}

/// Relative size of the error floor: a coordinate is judged relative to
/// `max(|a|, |n|, FLOOR_RATIO * max_i |a_i|)`.
pub const FLOOR_RATIO: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`. Some coordinates have an exactly zero
/// gradient (a conv bias feeding batchnorm, whose shift the normalization
/// cancels); their difference quotient is pure roundoff, ~eps |f| / h, and
/// the floor keeps it from being divided by itself.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare `analytic` against central differences of `f` at `x0` on
/// `coords` coordinates sampled without replacement.
pub fn fd_check(
    x0: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    coords: usize,
    seed: u64,
) -> FdReport {
    assert_eq!(x0.len(), analytic.len());
    let picks = index::sample(&mut stream(seed, "fd"), x0.len(), coords.min(x0.len())).into_vec();
    let mut x = x0.to_vec();
    let mut max_rel: f64 = 0.0;
    let floor = FLOOR_RATIO
        * analytic
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
    for &i in &picks {
        x[i] = x0[i] + FD_STEP;
        let up = f(&x);
        x[i] = x0[i] - FD_STEP;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(analytic[i], numeric, floor));
    }
    FdReport {
        max_rel,
        coords: picks.len(),
    }
}

pub fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, randn(rng, n)).unwrap()
}

fn probe_loss(y: &Tensor, probe: &[f64]) -> f64 {
    y.data().iter().zip(probe).map(|(a, b)| a * b).sum()
}

fn probe_grad(y: &Tensor, probe: &[f64]) -> Tensor {
    Tensor::from_vec(y.shape(), probe.to_vec()).unwrap()
}

fn split(v: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut at = 0;
    for &s in sizes {
        out.push(v[at..at + s].to_vec());
        at += s;
    }
    out
}

pub fn conv_case(seed: u64, stride: (usize, usize)) -> FdReport {
    let mut rng = stream(seed, "conv");
    let x = tensor(&mut rng, &[2, 3, 6, 7]);
    let mut conv = Conv2d::he_init(3, 4, (3, 3), stride, (1, 1), &mut rng);
    conv.bias = tensor(&mut rng, &[4]);
    let (y, tape) = conv.forward(&x).unwrap();
    let probe = randn(&mut rng, y.len());
    let dx = conv.backward(&tape, &probe_grad(&y, &probe)).unwrap();
    let sizes = [x.len(), conv.weight.len(), conv.bias.len()];
    let x0 = [x.data(), conv.weight.data(), conv.bias.data()].concat();
    let analytic = [
        dx.data(),
        conv.weight.grad().unwrap(),
        conv.bias.grad().unwrap(),
    ]
    .concat();
    fd_check(
        &x0,
        &analytic,
        |v| {
            let p = split(v, &sizes);
            let mut c = conv.clone();
            c.weight = Tensor::from_vec(conv.weight.shape(), p[1].clone()).unwrap();
            c.bias = Tensor::from_vec(&[4], p[2].clone()).unwrap();
            let (y, _) = c
                .forward(&Tensor::from_vec(x.shape(), p[0].clone()).unwrap())
                .unwrap();
            probe_loss(&y, &probe)
        },
        80,
        seed,
    )
}

pub fn batchnorm_case(seed: u64, mode: Mode) -> FdReport {
    let mut rng = stream(seed, "bn");
    let x = tensor(&mut rng, &[4, 3, 3, 5]);
    let mut bn = BatchNorm2d::new(3, 1e-5, 0.1);
    bn.gamma = tensor(&mut rng, &[3]);
    bn.beta = tensor(&mut rng, &[3]);
    bn.running_mean = tensor(&mut rng, &[3]);
    bn.running_var = Tensor::from_vec(&[3], vec![0.5, 1.5, 2.0]).unwrap();
    let frozen = bn.clone();
    let (y, tape) = bn.forward(&x, mode).unwrap();
    let probe = randn(&mut rng, y.len());
    let dx = bn.backward(&tape, &probe_grad(&y, &probe)).unwrap();
    let sizes = [x.len(), 3, 3];
    let x0 = [x.data(), frozen.gamma.data(), frozen.beta.data()].concat();
    let analytic = [dx.data(), bn.gamma.grad().unwrap(), bn.beta.grad().unwrap()].concat();
    fd_check(
        &x0,
        &analytic,
        |v| {
            let p = split(v, &sizes);
            let mut b = frozen.clone();
            b.gamma = Tensor::from_vec(&[3], p[1].clone()).unwrap();
            b.beta = Tensor::from_vec(&[3], p[2].clone()).unwrap();
            let (y, _) = b
                .forward(&Tensor::from_vec(x.shape(), p[0].clone()).unwrap(), mode)
                .unwrap();
            probe_loss(&y, &probe)
        },
        80,
        seed,
    )
}

pub fn leaky_relu_case(seed: u64) -> FdReport {
    let mut rng = stream(seed, "lrelu");
    let x = tensor(&mut rng, &[3, 2, 4, 5]);
    let act = LeakyRelu::new(0.2);
    let (y, tape) = act.forward(&x);
    let probe = randn(&mut rng, y.len());
    let dx = act.backward(&tape, &probe_grad(&y, &probe)).unwrap();
    fd_check(
        x.data(),
        dx.data(),
        |v| {
            let (y, _) = act.forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap());
            probe_loss(&y, &probe)
        },
        80,
        seed,
    )
}

pub fn linear_case(seed: u64) -> FdReport {
    let mut rng = stream(seed, "linear");
    let x = tensor(&mut rng, &[5, 7]);
    let mut lin = Linear::init(7, 3, &mut rng);
    lin.bias = tensor(&mut rng, &[3]);
    let (y, tape) = lin.forward(&x).unwrap();
    let probe = randn(&mut rng, y.len());
    let dx = lin.backward(&tape, &probe_grad(&y, &probe)).unwrap();
    let sizes = [x.len(), 21, 3];
    let x0 = [x.data(), lin.weight.data(), lin.bias.data()].concat();
    let analytic = [
        dx.data(),
        lin.weight.grad().unwrap(),
        lin.bias.grad().unwrap(),
    ]
    .concat();
    fd_check(
        &x0,
        &analytic,
        |v| {
            let p = split(v, &sizes);
            let l = Linear {
                weight: Tensor::from_vec(&[3, 7], p[1].clone()).unwrap(),
                bias: Tensor::from_vec(&[3], p[2].clone()).unwrap(),
            };
            let (y, _) = l
                .forward(&Tensor::from_vec(&[5, 7], p[0].clone()).unwrap())
                .unwrap();
            probe_loss(&y, &probe)
        },
        60,
        seed,
    )
}

fn set_params(net: &mut Bcnn, flat: &[f64]) {
    let mut at = 0;
    for p in net.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

fn flat_params(net: &Bcnn) -> Vec<f64> {
    net.params()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect()
}

fn flat_grads(net: &Bcnn) -> Vec<f64> {
    net.params()
        .iter()
        .flat_map(|t| t.grad().map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect()
}

/// Whole BCNN (conv/BN/LReLU stack, FC with extra features) in train mode.
pub fn bcnn_case(seed: u64) -> FdReport {
    let mut rng = stream(seed, "bcnn");
    let mut spec = BcnnSpec::standard(4, 8, 2, 3);
    spec.extra_features = 2;
    let mut net = build_bcnn(&spec, &mut rng).unwrap();
    let x = tensor(&mut rng, &[3, 2, 4, 8]);
    let e = tensor(&mut rng, &[3, 2]);
    let frozen = net.clone();
    let (y, tape) = net.forward(&x, Some(&e), Mode::Train).unwrap();
    let probe = randn(&mut rng, y.len());
    let (dx, de) = net.backward(&tape, &probe_grad(&y, &probe)).unwrap();
    let np = net.parameter_count();
    let sizes = [np, x.len(), e.len()];
    let x0 = [flat_params(&frozen), x.data().to_vec(), e.data().to_vec()].concat();
    let analytic = [
        flat_grads(&net),
        dx.data().to_vec(),
        de.unwrap().data().to_vec(),
    ]
    .concat();
    fd_check(
        &x0,
        &analytic,
        |v| {
            let p = split(v, &sizes);
            let mut n = frozen.clone();
            set_params(&mut n, &p[0]);
            let (y, _) = n
                .forward(
                    &Tensor::from_vec(x.shape(), p[1].clone()).unwrap(),
                    Some(&Tensor::from_vec(e.shape(), p[2].clone()).unwrap()),
                    Mode::Train,
                )
                .unwrap();
            probe_loss(&y, &probe)
        },
        120,
        seed,
    )
}

/// Classifier head plus cross-entropy, w.r.t. fingerprints and weights.
pub fn head_case(seed: u64, head: Head) -> FdReport {
    let mut rng = stream(seed, "head");
    let z = tensor(&mut rng, &[4, 6]);
    let w = tensor(&mut rng, &[3, 6]);
    let labels = [0, 2, 1, 2];
    let loss = |z: &Tensor, w: &Tensor| {
        let (logits, tape) = head_forward(z, w, head).unwrap();
        let (l, dl, _) = cross_entropy(&logits, &labels).unwrap();
        (l, tape, dl)
    };
    let (_, tape, dl) = loss(&z, &w);
    let (dz, dw) = head_backward(&tape, &dl).unwrap();
    let x0 = [z.data(), w.data()].concat();
    let analytic = [dz.data(), dw.as_slice()].concat();
    fd_check(
        &x0,
        &analytic,
        |v| {
            let z = Tensor::from_vec(&[4, 6], v[..24].to_vec()).unwrap();
            let w = Tensor::from_vec(&[3, 6], v[24..].to_vec()).unwrap();
            loss(&z, &w).0
        },
        42,
        seed,
    )
}

fn complex_probe(rng: &mut Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

fn flatten(c: &[Complex64]) -> Vec<f64> {
    c.iter().flat_map(|v| [v.re, v.im]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

/// Frequency then phase compensation w.r.t. the signal and both offsets.
pub fn compensation_case(seed: u64) -> FdReport {
    let mut rng = stream(seed, "comp");
    let m = 48;
    let r = complex_probe(&mut rng, m);
    let probe = complex_probe(&mut rng, m);
    let (omega, phi) = (0.003, 0.37);
    let r_w = freq_compensate(&r, omega);
    let out = phase_compensate(&r_w, phi);
    let (d_rw, d_phi) = phase_compensate_backward(&out, &probe, phi);
    let (d_r, d_omega) = freq_compensate_backward(&r_w, &d_rw, omega);
    let x0 = [flatten(&r), vec![omega, phi]].concat();
    let analytic = [flatten(&d_r), vec![d_omega, d_phi]].concat();
    let f = |v: &[f64]| {
        let r = unflatten(&v[..2 * m]);
        cdot(
            &phase_compensate(&freq_compensate(&r, v[2 * m]), v[2 * m + 1]),
            &probe,
        )
    };
    let mut rep = fd_check(&x0, &analytic, f, 60, seed);
    // Always include both offsets.
    let offsets = fd_check(
        &x0[2 * m..],
        &analytic[2 * m..],
        |o| {
            let mut v = x0.clone();
            v[2 * m..].copy_from_slice(o);
            f(&v)
        },
        2,
        seed,
    );
    rep.max_rel = rep.max_rel.max(offsets.max_rel);
    rep.coords += offsets.coords;
    rep
}

/// Small NS+HP model: every parameter of both NS networks, the fingerprint
/// network and the classifier, through both rotation compensations.
pub fn ns_pipeline_case(seed: u64, pipeline: Pipeline) -> FdReport {
    let cfg = ModelConfig {
        pipeline,
        symbol_count: 1,
        samples_per_chip: 2,
        image_width: 8,
        l_ns: 2,
        l_rff: 2,
        m: 4,
        ..Default::default()
    };
    let mut model = RffModel::new(&cfg, seed).unwrap();
    let mut rng = stream(seed, "pipeline");
    // Non-zero NS heads so that the offset paths carry gradient.
    for net in [&mut model.omega_net, &mut model.phi_net]
        .into_iter()
        .flatten()
    {
        let head = net.head_mut();
        let w = randn(&mut rng, head.weight.len());
        head.weight
            .data_mut()
            .iter_mut()
            .zip(w)
            .for_each(|(a, b)| *a = 0.3 * b);
        head.bias.data_mut()[0] = 0.1;
    }
    let batch = 4;
    let samples: Vec<Vec<Complex64>> = (0..batch)
        .map(|_| complex_probe(&mut rng, cfg.signal_len()))
        .collect();
    let prepared = Prepared { samples, ts: None };
    let w = init_classifier(3, cfg.m, &mut rng);
    let labels = [0, 1, 2, 1];
    let head = cfg.head();

    let loss_of = |model: &mut RffModel, w: &Tensor| {
        let (out, tape) = model.forward(&prepared, Mode::Train, true).unwrap();
        let (logits, htape) = head_forward(&out.z, w, head).unwrap();
        let (l, dl, _) = cross_entropy(&logits, &labels).unwrap();
        (l, tape, htape, dl)
    };
    let frozen = model.clone();
    let (_, tape, htape, dl) = loss_of(&mut model, &w);
    let (dz, dw) = head_backward(&htape, &dl).unwrap();
    model.backward(&tape, &dz).unwrap();

    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (a, b) in frozen.networks().iter().zip(model.networks()) {
        x0.extend(flat_params(a));
        analytic.extend(flat_grads(b));
    }
    x0.extend_from_slice(w.data());
    analytic.extend_from_slice(&dw);
    let sizes: Vec<usize> = frozen
        .networks()
        .iter()
        .map(|n| n.parameter_count())
        .collect();
    let loss_at = |v: &[f64]| {
        let mut m = frozen.clone();
        let mut at = 0;
        for (net, &n) in m.networks_mut().into_iter().zip(&sizes) {
            set_params(net, &v[at..at + n]);
            at += n;
        }
        let w = Tensor::from_vec(w.shape(), v[at..].to_vec()).unwrap();
        loss_of(&mut m, &w).0
    };
    let mut rep = fd_check(&x0, &analytic, loss_at, 150, seed);
    // The NS estimators are a small share of the parameters; sample them separately.
    let ns_len: usize = sizes[..sizes.len() - 1].iter().sum();
    if ns_len > 0 {
        let ns = fd_check(
            &x0[..ns_len],
            &analytic[..ns_len],
            |v| {
                let mut full = x0.clone();
                full[..ns_len].copy_from_slice(v);
                loss_at(&full)
            },
            60,
            seed + 1,
        );
        rep.max_rel = rep.max_rel.max(ns.max_rel);
        rep.coords += ns.coords;
    }
    rep
}

/// Direct evaluation of the convolution sum with zero padding, no flip.
pub fn brute_conv(
    x: &Tensor,
    k: &Tensor,
    b: &[f64],
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let xi = |s: usize, ch: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i as usize >= h || j as usize >= w {
            0.0
        } else {
            x.data()[((s * c + ch) * h + i as usize) * w + j as usize]
        }
    };
    let mut out = Vec::with_capacity(n * f * oh * ow);
    for s in 0..n {
        for fi in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[fi];
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let ii = (i * stride.0 + u) as isize - pad.0 as isize;
                                let jj = (j * stride.1 + v) as isize - pad.1 as isize;
                                acc +=
                                    xi(s, ch, ii, jj) * k.data()[((fi * c + ch) * kh + u) * kw + v];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

/// O(n^2) Mann-Whitney estimate of P(inter > intra), ties counting one half.
pub fn mann_whitney(intra: &[f64], inter: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in intra {
        for &b in inter {
            s += if b > a {
                1.0
            } else if b == a {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (intra.len() * inter.len()) as f64
}

/// Random `K x m` weights and a `z` whose class `i` logit beats all others.
pub fn margin_case(rng: &mut Rng, k: usize, m: usize) -> (Tensor, Vec<f64>, usize) {
    loop {
        let w = tensor(rng, &[k, m]);
        let z = randn(rng, m);
        let logits: Vec<f64> = (0..k)
            .map(|j| {
                w.data()[j * m..][..m]
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
        if logits[order[0]] - logits[order[1]] > 1e-6 {
            return (w, z, order[0]);
        }
    }
}
