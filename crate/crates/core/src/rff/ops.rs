//! Differentiable offset compensation, classifier heads and the
//! cross-entropy objective.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sync::rotate_samples;

/// `r(t) exp{-j2pi omega t}`.
pub fn freq_compensate(r: &[Complex64], omega: f64) -> Vec<Complex64> {
    rotate_samples(r, omega, 0.0)
}

/// Backward of [`freq_compensate`] given its output `out` and the output
/// gradient `grad` (real and imaginary parts as one complex number).
/// Returns the input gradient and `dL/domega`.
pub fn freq_compensate_backward(
    out: &[Complex64],
    grad: &[Complex64],
    omega: f64,
) -> (Vec<Complex64>, f64) {
    let mut d_omega = 0.0;
    for (t, (v, g)) in out.iter().zip(grad).enumerate() {
        d_omega += t as f64 * (g.re * v.im - g.im * v.re);
    }
    // The adjoint of multiplying by a unit phasor is multiplying by its conjugate.
    (rotate_samples(grad, -omega, 0.0), 2.0 * PI * d_omega)
}

/// `r(t) exp{+j2pi phi}`.
pub fn phase_compensate(r: &[Complex64], phi: f64) -> Vec<Complex64> {
    rotate_samples(r, 0.0, phi)
}

/// Backward of [`phase_compensate`]; returns the input gradient and `dL/dphi`.
pub fn phase_compensate_backward(
    out: &[Complex64],
    grad: &[Complex64],
    phi: f64,
) -> (Vec<Complex64>, f64) {
    let d_phi: f64 = out
        .iter()
        .zip(grad)
        .map(|(v, g)| g.im * v.re - g.re * v.im)
        .sum();
    (rotate_samples(grad, 0.0, -phi), 2.0 * PI * d_phi)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_classifier(z: &[f64], w: &Tensor) -> Result<(usize, usize)> {
    match *w.shape() {
        [k, m] if m == z.len() && k > 0 => Ok((k, m)),
        _ => Err(Error::shape(format!(
            "classifier {:?} does not match a {}-dim fingerprint",
            w.shape(),
            z.len()
        ))),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `softmax(W z)`.
pub fn naive_softmax_prob(z: &[f64], w: &Tensor) -> Result<Vec<f64>> {
    let (k, m) = check_classifier(z, w)?;
    let logits: Vec<f64> = (0..k)
        .map(|i| {
            w.data()[i * m..][..m]
                .iter()
                .zip(z)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok(softmax(&logits))
}

/// `alpha z / |z|`.
pub fn hypersphere_project(z: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let n = norm(z);
    if !(n > 0.0) {
        return Err(Error::Degenerate("zero-norm fingerprint".into()));
    }
    Ok(z.iter().map(|v| alpha * v / n).collect())
}

/// `softmax(W' z')` with unit-norm classifier rows and `z` projected onto
/// the radius-`alpha` sphere.
pub fn hypersphere_prob(z: &[f64], w: &Tensor, alpha: f64) -> Result<Vec<f64>> {
    let (k, m) = check_classifier(z, w)?;
    let zp = hypersphere_project(z, alpha)?;
    let mut logits = Vec::with_capacity(k);
    for i in 0..k {
        let row = &w.data()[i * m..][..m];
        let n = norm(row);
        if !(n > 0.0) {
            return Err(Error::Degenerate(format!(
                "classifier row {i} has zero norm"
            )));
        }
        logits.push(row.iter().zip(&zp).map(|(a, b)| a * b).sum::<f64>() / n);
    }
    Ok(softmax(&logits))
}

/// Auxiliary classifier variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Naive,
    Hypersphere { alpha: f64 },
}

/// Saved state of [`head_forward`].
#[derive(Debug, Clone)]
pub struct HeadTape {
    head: Head,
    n: usize,
    k: usize,
    m: usize,
    /// Projected (or raw) fingerprints, `[N, m]`.
    zp: Vec<f64>,
    z_norm: Vec<f64>,
    /// Normalized (or raw) classifier rows, `[K, m]`.
    wp: Vec<f64>,
    w_norm: Vec<f64>,
}

/// Logits `[N, K]` of a batch of fingerprints `z` `[N, m]` against `w` `[K, m]`.
pub fn head_forward(z: &Tensor, w: &Tensor, head: Head) -> Result<(Tensor, HeadTape)> {
    let (&[n, m], &[k, mw]) = (z.shape(), w.shape()) else {
        return Err(Error::shape(
            "head expects [N,m] fingerprints and [K,m] weights",
        ));
    };
    if m != mw {
        return Err(Error::shape(format!(
            "fingerprint dim {m} vs classifier dim {mw}"
        )));
    }
    let (zp, z_norm, wp, w_norm) = match head {
        Head::Naive => (
            z.data().to_vec(),
            vec![1.0; n],
            w.data().to_vec(),
            vec![1.0; k],
        ),
        Head::Hypersphere { alpha } => {
            let mut zp = Vec::with_capacity(n * m);
            let mut zn = Vec::with_capacity(n);
            for row in z.data().chunks_exact(m) {
                let l = norm(row);
                if !(l > 0.0) {
                    return Err(Error::Degenerate("zero-norm fingerprint".into()));
                }
                zp.extend(row.iter().map(|v| alpha * v / l));
                zn.push(l);
            }
            let mut wp = Vec::with_capacity(k * m);
            let mut wn = Vec::with_capacity(k);
            for (i, row) in w.data().chunks_exact(m).enumerate() {
                let l = norm(row);
                if !(l > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "classifier row {i} has zero norm"
                    )));
                }
                wp.extend(row.iter().map(|v| v / l));
                wn.push(l);
            }
            (zp, zn, wp, wn)
        }
    };
    let mut logits = vec![0.0; n * k];
    for i in 0..n {
        let zi = &zp[i * m..][..m];
        for j in 0..k {
            logits[i * k + j] = zi.iter().zip(&wp[j * m..][..m]).map(|(a, b)| a * b).sum();
        }
    }
    let out = Tensor::from_vec(&[n, k], logits)?;
    out.check_finite("classifier head")?;
    Ok((
        out,
        HeadTape {
            head,
            n,
            k,
            m,
            zp,
            z_norm,
            wp,
            w_norm,
        },
    ))
}

/// Backward of [`head_forward`]: gradients w.r.t. `z` and `w`.
pub fn head_backward(tape: &HeadTape, dlogits: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let HeadTape { n, k, m, .. } = *tape;
    if dlogits.shape() != [n, k] {
        return Err(Error::shape("logit gradient does not match head tape"));
    }
    let g = dlogits.data();
    let mut dzp = vec![0.0; n * m];
    let mut dwp = vec![0.0; k * m];
    for i in 0..n {
        for j in 0..k {
            let gij = g[i * k + j];
            if gij == 0.0 {
                continue;
            }
            for d in 0..m {
                dzp[i * m + d] += gij * tape.wp[j * m + d];
                dwp[j * m + d] += gij * tape.zp[i * m + d];
            }
        }
    }
    if let Head::Hypersphere { alpha } = tape.head {
        // u = v/|v|  =>  dv = (du - u (u . du)) / |v|
        let unproject = |grad: &mut [f64], proj: &[f64], scale: f64, len: f64| {
            let u: Vec<f64> = proj.iter().map(|p| p / scale).collect();
            let du: Vec<f64> = grad.iter().map(|g| g * scale).collect();
            let dot: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
            for ((g, u), du) in grad.iter_mut().zip(&u).zip(&du) {
                *g = (du - u * dot) / len;
            }
        };
        for i in 0..n {
            unproject(
                &mut dzp[i * m..][..m],
                &tape.zp[i * m..][..m],
                alpha,
                tape.z_norm[i],
            );
        }
        for j in 0..k {
            unproject(
                &mut dwp[j * m..][..m],
                &tape.wp[j * m..][..m],
                1.0,
                tape.w_norm[j],
            );
        }
    }
    Ok((Tensor::from_vec(&[n, m], dzp)?, dwp))
}

/// Mean cross-entropy of `logits` `[N, K]` against `labels`. Returns the
/// loss, its gradient w.r.t. the logits and the per-record `ln q(y|z)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Vec<f64>)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape("logits must be [N, K]"));
    };
    if labels.len() != n || n == 0 {
        return Err(Error::shape("one label per logit row required"));
    }
    let mut grad = vec![0.0; n * k];
    let mut log_q = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::arg(format!("label {y} outside [0, {k})")));
        }
        let row = &logits.data()[i * k..][..k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        log_q.push(row[y] - lse);
        for j in 0..k {
            grad[i * k + j] = ((row[j] - lse).exp() - f64::from(j == y)) / n as f64;
        }
    }
    let loss = -log_q.iter().sum::<f64>() / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross entropy"));
    }
    Ok((loss, Tensor::from_vec(&[n, k], grad)?, log_q))
}
