//! Synthetic transmitter model: ideal preamble, device impairments, channel
//! noise, and dataset assembly with the closed/open split structure.

mod channel;
mod dataset;
mod device;
pub mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use channel::{apply_channel, NOISELESS};
pub use dataset::{
    build_dataset, DatasetConfig, DatasetSplit, DeviceEras, DevicePopulation, SnrPolicy, SplitName,
    TransmissionRecord,
};
pub use device::{age_profile, apply_device, AgingScales, DeviceProfile, Imprint, MAX_DEVICE_CFO};

/// Chips per preamble symbol.
pub const CHIPS_PER_SYMBOL: usize = 32;

/// Chip sequence of the repeated preamble symbol (symbol 0 of the 2.4 GHz
/// O-QPSK direct-sequence table).
pub const PREAMBLE_CHIPS: [u8; CHIPS_PER_SYMBOL] = [
    1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0,
];

/// Default receiver sample rate (10 Msample/s).
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10e6;

/// A fixed-length complex baseband record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean squared magnitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// Scale to unit average power, so that the energy equals the length.
    pub fn normalize(&mut self) -> Result<()> {
        let p = self.power();
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Degenerate(
                "cannot normalize a zero-energy signal".into(),
            ));
        }
        let g = p.sqrt().recip();
        for s in &mut self.samples {
            *s *= g;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }
}

/// Build the ideal periodic O-QPSK preamble: `symbol_count` copies of the
/// half-sine shaped 32-chip symbol, `samples_per_chip` samples per chip,
/// scaled to unit average power.
///
/// The quadrature pulse of the last chip wraps into the start of the symbol,
/// so every symbol (including the first) is identical and the signal is
/// exactly periodic.
pub fn generate_preamble(symbol_count: usize, samples_per_chip: usize) -> Result<ComplexSignal> {
    if symbol_count == 0 {
        return Err(Error::arg("preamble needs at least one symbol"));
    }
    if samples_per_chip == 0 {
        return Err(Error::arg("samples_per_chip must be at least 1"));
    }
    let period = CHIPS_PER_SYMBOL * samples_per_chip;
    let level = |chip: usize| if PREAMBLE_CHIPS[chip] == 1 { 1.0 } else { -1.0 };
    let half_sine = |u: f64| (PI * u / 2.0).sin();

    let mut symbol = Vec::with_capacity(period);
    for n in 0..period {
        // Sample centres avoid the pulse zeros at chip boundaries.
        let tau = (n as f64 + 0.5) / samples_per_chip as f64;
        let pair = (tau / 2.0).floor() as usize;
        let i = level(2 * pair) * half_sine(tau - 2.0 * pair as f64);
        let uq = (tau - 1.0).rem_euclid(CHIPS_PER_SYMBOL as f64);
        let qpair = (uq / 2.0).floor() as usize;
        let q = level(2 * qpair + 1) * half_sine(uq - 2.0 * qpair as f64);
        symbol.push(Complex64::new(i, q));
    }
    let p: f64 = symbol.iter().map(|s| s.norm_sqr()).sum::<f64>() / period as f64;
    let g = p.sqrt().recip();
    for s in &mut symbol {
        *s *= g;
    }

    let mut samples = Vec::with_capacity(period * symbol_count);
    for _ in 0..symbol_count {
        samples.extend_from_slice(&symbol);
    }
    Ok(ComplexSignal::new(samples, DEFAULT_SAMPLE_RATE_HZ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preamble_lengths() {
        assert_eq!(generate_preamble(8, 5).unwrap().len(), 1280);
        assert_eq!(generate_preamble(1, 1).unwrap().len(), 32);
    }

    #[test]
    fn preamble_is_exactly_periodic() {
        let x = generate_preamble(2, 5).unwrap();
        assert_eq!(x.samples[..160], x.samples[160..]);
        let x = generate_preamble(8, 5).unwrap();
        for t in 0..x.len() - 160 {
            assert_eq!(x.samples[t], x.samples[t + 160]);
        }
    }

    #[test]
    fn preamble_has_unit_power() {
        let x = generate_preamble(8, 5).unwrap();
        assert!((x.energy() - 1280.0).abs() <= 1e-9 * 1280.0);
        // Half-sine O-QPSK is constant envelope.
        for s in &x.samples {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_preamble_counts() {
        assert!(matches!(
            generate_preamble(0, 5),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            generate_preamble(8, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn normalize_sets_energy_to_length() {
        let mut s = ComplexSignal::new(
            vec![
                Complex64::new(3.0, 4.0),
                Complex64::new(0.5, -1.0),
                Complex64::new(0.0, 2.0),
            ],
            1.0,
        );
        s.normalize().unwrap();
        assert!((s.energy() - 3.0).abs() <= 1e-9 * 3.0);
        let mut z = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 4], 1.0);
        assert!(z.normalize().is_err());
    }
}
