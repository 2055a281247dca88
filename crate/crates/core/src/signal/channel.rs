use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::ComplexSignal;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// SNR sentinel meaning "add no noise".
pub const NOISELESS: f64 = f64::INFINITY;

/// Add circular complex white Gaussian noise at `snr_db` relative to the
/// measured signal power. `NOISELESS` returns the input unchanged.
pub fn apply_channel(r: &ComplexSignal, snr_db: f64, rng: &mut Rng) -> Result<ComplexSignal> {
    if snr_db == NOISELESS {
        return Ok(r.clone());
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::arg(format!("invalid SNR {snr_db} dB")));
    }
    let power = r.power();
    if !(power > 0.0) {
        return Err(Error::Degenerate("channel input has zero energy".into()));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let samples = r
        .samples
        .iter()
        .map(|&s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(ComplexSignal::new(samples, r.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::signal::generate_preamble;

    fn empirical_snr_db(snr: f64, trials: usize) -> f64 {
        let x = generate_preamble(8, 5).unwrap();
        let mut rng = stream(42, "noise");
        let (mut sig, mut noise) = (0.0, 0.0);
        for _ in 0..trials {
            let y = apply_channel(&x, snr, &mut rng).unwrap();
            sig += x.energy();
            noise += y
                .samples
                .iter()
                .zip(&x.samples)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        10.0 * (sig / noise).log10()
    }

    #[test]
    fn noiseless_sentinel_is_identity() {
        let x = generate_preamble(8, 5).unwrap();
        assert_eq!(
            apply_channel(&x, NOISELESS, &mut stream(0, "n")).unwrap(),
            x
        );
    }

    #[test]
    fn noise_is_calibrated() {
        assert!((empirical_snr_db(30.0, 1000) - 30.0).abs() <= 0.5);
        assert!((empirical_snr_db(0.0, 1000) - 0.0).abs() <= 0.5);
    }

    #[test]
    fn zero_energy_is_rejected() {
        let z = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 8], 1.0);
        assert!(apply_channel(&z, 10.0, &mut stream(0, "n")).is_err());
    }
}
