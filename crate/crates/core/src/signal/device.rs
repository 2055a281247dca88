use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ComplexSignal;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sync;

/// Largest carrier offset a device may carry, in cycles per sample.
pub const MAX_DEVICE_CFO: f64 = 0.01;

/// Hardware impairments of one synthetic transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: u32,
    /// Normalized carrier frequency offset (cycles/sample).
    pub cfo_cycles_per_sample: f64,
    /// Standard deviation of the per-transmission CFO jitter.
    pub cfo_jitter_std: f64,
    /// Relative I/Q gain mismatch.
    pub iq_gain_imbalance: f64,
    pub iq_phase_imbalance_rad: f64,
    /// Memoryless PA: `a1*s + a3*|s|^2*s`.
    pub pa_a1: f64,
    pub pa_a3: f64,
    pub dc_offset: Complex64,
}

impl DeviceProfile {
    /// A transmitter with every impairment neutral.
    pub fn identity(device_id: u32) -> Self {
        Self {
            device_id,
            cfo_cycles_per_sample: 0.0,
            cfo_jitter_std: 0.0,
            iq_gain_imbalance: 0.0,
            iq_phase_imbalance_rad: 0.0,
            pa_a1: 1.0,
            pa_a3: 0.0,
            dc_offset: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfo_cycles_per_sample.abs() <= MAX_DEVICE_CFO) {
            return Err(Error::arg(format!(
                "device {} cfo {} outside +/-{MAX_DEVICE_CFO}",
                self.device_id, self.cfo_cycles_per_sample
            )));
        }
        if !(self.pa_a1 > 0.0) || !(self.pa_a3.abs() < self.pa_a1) {
            return Err(Error::arg(format!(
                "device {} PA coefficients need a1 > 0 and |a3| < a1",
                self.device_id
            )));
        }
        if !(self.cfo_jitter_std >= 0.0) {
            return Err(Error::arg("cfo jitter must be non-negative"));
        }
        Ok(())
    }

    fn amplify(&self, s: Complex64) -> Complex64 {
        s * self.pa_a1 + s * (self.pa_a3 * s.norm_sqr())
    }

    fn iq_imbalance(&self, s: Complex64) -> Complex64 {
        let g = self.iq_gain_imbalance / 2.0;
        let (sin, cos) = (self.iq_phase_imbalance_rad / 2.0).sin_cos();
        Complex64::new(
            (1.0 + g) * (s.re * cos - s.im * sin),
            (1.0 - g) * (s.im * cos - s.re * sin),
        )
    }
}

/// Output of [`apply_device`]: the impaired signal plus the exact rotation
/// that was imprinted on it.
#[derive(Debug, Clone)]
pub struct Imprint {
    pub signal: ComplexSignal,
    pub true_freq: f64,
    pub true_phase: f64,
}

/// Pass `x` through the transmitter `profile`: PA, I/Q imbalance, DC offset,
/// then the carrier rotation `exp{j2pi(w t - phi)}` with `w` the device CFO
/// plus jitter and `phi = per_tx_phase` (cycles).
pub fn apply_device(
    x: &ComplexSignal,
    profile: &DeviceProfile,
    per_tx_phase: f64,
    rng: &mut Rng,
) -> Imprint {
    let z: f64 = rng.sample(StandardNormal);
    let freq = profile.cfo_cycles_per_sample + profile.cfo_jitter_std * z;
    let impaired: Vec<Complex64> = x
        .samples
        .iter()
        .map(|&s| profile.iq_imbalance(profile.amplify(s)) + profile.dc_offset)
        .collect();
    let impaired = ComplexSignal::new(impaired, x.sample_rate_hz);
    Imprint {
        signal: sync::rotate(&impaired, -freq, -per_tx_phase),
        true_freq: freq,
        true_phase: per_tx_phase,
    }
}

/// Per-parameter drift scales for device aging (standard deviation at
/// severity 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgingScales {
    pub cfo: f64,
    pub iq_gain: f64,
    pub iq_phase: f64,
    pub pa_a3: f64,
    pub dc: f64,
}

impl Default for AgingScales {
    fn default() -> Self {
        Self {
            cfo: 1e-4,
            iq_gain: 0.01,
            iq_phase: 0.006,
            pa_a3: 0.01,
            dc: 0.004,
        }
    }
}

/// Return a drifted copy of `profile`: each impairment moves by zero-mean
/// Gaussian noise with standard deviation `severity * scale`.
pub fn age_profile(
    profile: &DeviceProfile,
    severity: f64,
    scales: &AgingScales,
    rng: &mut Rng,
) -> Result<DeviceProfile> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::arg(format!(
            "aging severity {severity} outside [0, 1]"
        )));
    }
    let mut drift = |scale: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        severity * scale * z
    };
    let mut aged = profile.clone();
    aged.cfo_cycles_per_sample =
        (aged.cfo_cycles_per_sample + drift(scales.cfo)).clamp(-MAX_DEVICE_CFO, MAX_DEVICE_CFO);
    aged.iq_gain_imbalance += drift(scales.iq_gain);
    aged.iq_phase_imbalance_rad += drift(scales.iq_phase);
    let a3_limit = 0.99 * aged.pa_a1;
    aged.pa_a3 = (aged.pa_a3 + drift(scales.pa_a3)).clamp(-a3_limit, a3_limit);
    let dre = drift(scales.dc);
    let dim = drift(scales.dc);
    aged.dc_offset += Complex64::new(dre, dim);
    Ok(aged)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::rng::stream;
    use crate::signal::generate_preamble;

    #[test]
    fn identity_profile_is_transparent() {
        let x = generate_preamble(8, 5).unwrap();
        let out = apply_device(&x, &DeviceProfile::identity(0), 0.0, &mut stream(1, "t"));
        assert_eq!(out.signal, x);
        assert_eq!(out.true_freq, 0.0);
        assert_eq!(out.true_phase, 0.0);
    }

    #[test]
    fn pure_rotation_matches_formula() {
        let x = generate_preamble(8, 5).unwrap();
        let mut p = DeviceProfile::identity(3);
        p.cfo_cycles_per_sample = 0.001;
        let out = apply_device(&x, &p, 0.25, &mut stream(1, "t"));
        assert_eq!(out.true_freq, 0.001);
        for (t, (y, s)) in out.signal.samples.iter().zip(&x.samples).enumerate() {
            let expect = s * Complex64::from_polar(1.0, 2.0 * PI * (0.001 * t as f64 - 0.25));
            assert!((y - expect).norm() < 1e-12, "sample {t}");
        }
    }

    #[test]
    fn ground_truth_round_trip() {
        let x = generate_preamble(8, 5).unwrap();
        let mut p = DeviceProfile::identity(0);
        p.cfo_cycles_per_sample = -0.0007;
        p.cfo_jitter_std = 2e-5;
        let out = apply_device(&x, &p, 0.61, &mut stream(9, "t"));
        let back = sync::rotate(&out.signal, out.true_freq, out.true_phase);
        for (a, b) in back.samples.iter().zip(&x.samples) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn pa_compression_lowers_peak() {
        let x = generate_preamble(8, 5).unwrap();
        let peak = |s: &ComplexSignal| s.samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let base = apply_device(&x, &DeviceProfile::identity(0), 0.0, &mut stream(1, "t"));
        let mut p = DeviceProfile::identity(0);
        p.pa_a3 = -0.05 * p.pa_a1;
        let squashed = apply_device(&x, &p, 0.0, &mut stream(1, "t"));
        assert!(peak(&squashed.signal) < peak(&base.signal));
    }

    #[test]
    fn zero_severity_aging_is_identity() {
        let mut p = DeviceProfile::identity(4);
        p.cfo_cycles_per_sample = 3e-4;
        p.iq_gain_imbalance = 0.02;
        p.dc_offset = Complex64::new(0.01, -0.005);
        let aged = age_profile(&p, 0.0, &AgingScales::default(), &mut stream(2, "a")).unwrap();
        assert_eq!(aged, p);
    }

    #[test]
    fn aging_is_deterministic_and_keeps_id() {
        let p = DeviceProfile::identity(11);
        let s = AgingScales::default();
        let a = age_profile(&p, 0.7, &s, &mut stream(5, "a")).unwrap();
        let b = age_profile(&p, 0.7, &s, &mut stream(5, "a")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.device_id, 11);
        assert_ne!(a, p);
        a.validate().unwrap();
    }

    #[test]
    fn aging_cfo_drift_tail() {
        // 5e-4 is ten standard deviations at severity 0.5, scale 1e-4.
        let p = DeviceProfile::identity(0);
        let s = AgingScales {
            cfo: 1e-4,
            ..AgingScales::default()
        };
        let mut rng = stream(3, "tail");
        let trials = 20_000;
        let within = (0..trials)
            .filter(|_| {
                let a = age_profile(&p, 0.5, &s, &mut rng).unwrap();
                a.cfo_cycles_per_sample.abs() <= 5e-4
            })
            .count();
        assert!(within as f64 >= 0.9999 * trials as f64);
    }

    #[test]
    fn aging_rejects_bad_severity() {
        let p = DeviceProfile::identity(0);
        assert!(age_profile(&p, 1.5, &AgingScales::default(), &mut stream(0, "a")).is_err());
    }

    #[test]
    fn profile_validation() {
        let mut p = DeviceProfile::identity(0);
        p.validate().unwrap();
        p.cfo_cycles_per_sample = 0.02;
        assert!(p.validate().is_err());
        let mut p = DeviceProfile::identity(0);
        p.pa_a3 = -1.5;
        assert!(p.validate().is_err());
    }
}
