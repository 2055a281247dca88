//! Traditional carrier synchronization: maximum-likelihood frequency and
//! phase offset estimation against the known preamble, and the rotation
//! used both for compensation and by the transmitter model.
//!
//! The least-squares objective `sum |r(t) - x(t) exp{j2pi(w t - phi)}|^2`
//! depends on `w` only through the correlation
//! `C(w) = sum r(t) conj(x(t)) exp{-j2pi w t}`, so the estimator maximizes
//! `|C(w)|` (coarse chirp-z scan of a uniform grid, then golden-section
//! refinement) and reads the phase off `arg C(w)` in closed form.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Estimated carrier offsets: frequency in cycles/sample, phase in cycles
/// within `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub freq_cycles_per_sample: f64,
    pub phase_cycles: f64,
}

/// Frequency search configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    /// Search `[-max_freq, max_freq]` cycles/sample.
    pub max_freq: f64,
    /// Coarse grid size.
    pub points: usize,
    /// Final bracket width of the refinement.
    pub tolerance: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            max_freq: 0.01,
            points: 4096,
            tolerance: 1e-8,
        }
    }
}

impl SearchGrid {
    fn step(&self) -> f64 {
        2.0 * self.max_freq / (self.points - 1) as f64
    }
}

/// Wrap a phase in cycles into `[0, 1)`.
pub fn canonical_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(1.0);
    if p >= 1.0 {
        0.0
    } else {
        p
    }
}

/// `r(t) * exp{-j2pi(freq t - phase)}` for `t = 0, 1, ...`.
pub fn rotate_samples(r: &[Complex64], freq: f64, phase: f64) -> Vec<Complex64> {
    r.iter()
        .enumerate()
        .map(|(t, &s)| s * Complex64::from_polar(1.0, -2.0 * PI * (freq * t as f64 - phase)))
        .collect()
}

/// Compensate `r` by the offsets `(freq, phase)`.
pub fn rotate(r: &ComplexSignal, freq: f64, phase: f64) -> ComplexSignal {
    ComplexSignal::new(rotate_samples(&r.samples, freq, phase), r.sample_rate_hz)
}

/// TS compensation with an estimate.
pub fn compensate(r: &ComplexSignal, est: &OffsetEstimate) -> ComplexSignal {
    rotate(r, est.freq_cycles_per_sample, est.phase_cycles)
}

/// Least-squares objective of the offset model at `est`.
pub fn ts_residual(r: &ComplexSignal, x: &ComplexSignal, est: &OffsetEstimate) -> Result<f64> {
    if r.len() != x.len() {
        return Err(Error::shape(format!(
            "r has {} samples, x has {}",
            r.len(),
            x.len()
        )));
    }
    let model = rotate_samples(&x.samples, -est.freq_cycles_per_sample, -est.phase_cycles);
    Ok(r.samples
        .iter()
        .zip(&model)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}

/// Reusable estimator for one preamble and grid. The chirp-z kernel is
/// computed once, so estimating many records costs three FFTs each.
#[derive(Clone)]
pub struct TsEstimator {
    x_conj: Vec<Complex64>,
    grid: SearchGrid,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_spectrum: Vec<Complex64>,
}

impl std::fmt::Debug for TsEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TsEstimator")
            .field("len", &self.x_conj.len())
            .field("grid", &self.grid)
            .finish()
    }
}

/// `exp{j pi step n^2}`, with the exponent reduced before scaling by pi.
fn chirp(step: f64, n: i64, sign: f64) -> Complex64 {
    let e = (step * (n * n) as f64).rem_euclid(2.0);
    Complex64::from_polar(1.0, sign * PI * e)
}

impl TsEstimator {
    pub fn new(x: &ComplexSignal, grid: SearchGrid) -> Result<Self> {
        if x.is_empty() || !(x.energy() > 0.0) {
            return Err(Error::arg("preamble has zero energy"));
        }
        if grid.points < 3 || !(grid.max_freq > 0.0) || !(grid.tolerance > 0.0) {
            return Err(Error::arg(format!("invalid search grid {grid:?}")));
        }
        let m = x.len();
        let k = grid.points;
        let fft_len = (m + k - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        // Kernel b[n] = exp{+j pi step n^2}, n in -(m-1)..k, stored circularly.
        let step = grid.step();
        let mut kernel = vec![Complex64::new(0.0, 0.0); fft_len];
        for n in 0..k as i64 {
            kernel[n as usize] = chirp(step, n, 1.0);
        }
        for n in 1..m as i64 {
            kernel[fft_len - n as usize] = chirp(step, n, 1.0);
        }
        forward.process(&mut kernel);

        Ok(Self {
            x_conj: x.samples.iter().map(|s| s.conj()).collect(),
            grid,
            fft_len,
            forward,
            inverse,
            kernel_spectrum: kernel,
        })
    }

    pub fn grid(&self) -> &SearchGrid {
        &self.grid
    }

    fn freq_at(&self, k: usize) -> f64 {
        -self.grid.max_freq + k as f64 * self.grid.step()
    }

    /// `C(w)` on every coarse grid point (Bluestein chirp-z transform).
    pub fn coarse_spectrum(&self, prod: &[Complex64]) -> Vec<Complex64> {
        let step = self.grid.step();
        let w0 = -self.grid.max_freq;
        let mut a = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (t, (&c, slot)) in prod.iter().zip(a.iter_mut()).enumerate() {
            let shift = Complex64::from_polar(1.0, -2.0 * PI * w0 * t as f64);
            *slot = c * shift * chirp(step, t as i64, -1.0);
        }
        self.forward.process(&mut a);
        for (v, b) in a.iter_mut().zip(&self.kernel_spectrum) {
            *v *= b;
        }
        self.inverse.process(&mut a);
        let scale = 1.0 / self.fft_len as f64;
        (0..self.grid.points)
            .map(|k| a[k] * scale * chirp(step, k as i64, -1.0))
            .collect()
    }

    fn correlation(prod: &[Complex64], freq: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, -2.0 * PI * freq);
        let mut phasor = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &c) in prod.iter().enumerate() {
            acc += c * phasor;
            phasor *= step;
            if t % 256 == 255 {
                phasor = Complex64::from_polar(1.0, -2.0 * PI * freq * (t + 1) as f64);
            }
        }
        acc
    }

    /// Maximum-likelihood offsets of `r`.
    pub fn estimate(&self, r: &ComplexSignal) -> Result<OffsetEstimate> {
        if r.len() != self.x_conj.len() {
            return Err(Error::shape(format!(
                "r has {} samples, preamble has {}",
                r.len(),
                self.x_conj.len()
            )));
        }
        if !(r.energy() > 0.0) {
            return Err(Error::arg("received signal has zero energy"));
        }
        let prod: Vec<Complex64> = r
            .samples
            .iter()
            .zip(&self.x_conj)
            .map(|(a, b)| a * b)
            .collect();

        let coarse = self.coarse_spectrum(&prod);
        let best = coarse
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, c)| {
                let v = c.norm_sqr();
                if v > acc.1 {
                    (k, v)
                } else {
                    acc
                }
            })
            .0;

        // Golden-section maximization of |C| on the bracketing grid cells.
        let mut lo = self.freq_at(best.saturating_sub(1));
        let mut hi = self.freq_at((best + 1).min(self.grid.points - 1));
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let objective = |w: f64| Self::correlation(&prod, w).norm_sqr();
        let mut a = hi - inv_phi * (hi - lo);
        let mut b = lo + inv_phi * (hi - lo);
        let (mut fa, mut fb) = (objective(a), objective(b));
        while hi - lo > self.grid.tolerance {
            if fa > fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - inv_phi * (hi - lo);
                fa = objective(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + inv_phi * (hi - lo);
                fb = objective(b);
            }
        }
        let freq = 0.5 * (lo + hi);
        let c = Self::correlation(&prod, freq);
        Ok(OffsetEstimate {
            freq_cycles_per_sample: freq,
            phase_cycles: canonical_phase(-c.arg() / (2.0 * PI)),
        })
    }
}

/// One-shot estimation; prefer [`TsEstimator`] for many records.
pub fn ts_estimate(
    r: &ComplexSignal,
    x: &ComplexSignal,
    grid: SearchGrid,
) -> Result<OffsetEstimate> {
    if r.len() != x.len() {
        return Err(Error::shape(format!(
            "r has {} samples, x has {}",
            r.len(),
            x.len()
        )));
    }
    TsEstimator::new(x, grid)?.estimate(r)
}
