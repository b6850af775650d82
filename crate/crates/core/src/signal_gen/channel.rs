use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Adds circularly-symmetric complex Gaussian noise so that the
/// Es/N0 at the output of a unit-energy matched filter equals `snr_db`.
///
/// Unit-energy symbols through unit-energy taps produce a unit-amplitude peak
/// at the matched-filter output while white noise of per-sample variance
/// `sigma^2` keeps variance `sigma^2`, so `sigma^2 = 10^(-snr_db/10)`.
/// An infinite `snr_db` disables the noise.
pub fn apply_awgn<R: Rng + ?Sized>(samples: &[Complex64], snr_db: f64, rng: &mut R) -> Vec<Complex64> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return samples.to_vec();
    }
    let sigma = (noise_variance(snr_db) / 2.0).sqrt();
    samples
        .iter()
        .map(|&s| {
            let i: f64 = rng.sample(StandardNormal);
            let q: f64 = rng.sample(StandardNormal);
            s + Complex64::new(i * sigma, q * sigma)
        })
        .collect()
}

/// Total complex noise variance per sample for a given Es/N0 in dB.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_gen::modulation::{map_symbols, ModulationClass};
    use crate::signal_gen::pulse::{design_rrc, matched_filter_downsample, pulse_shape, PulseShapeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn measured_snr_db(snr_db: f64, seed: u64) -> f64 {
        let cfg = PulseShapeConfig::default();
        let taps = design_rrc(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let syms = map_symbols(ModulationClass::Qpsk, n, &mut rng);
        let tx = pulse_shape(&syms, &taps, 4).unwrap();
        let rx_tx = apply_awgn(&tx, snr_db, &mut rng);
        let clean = matched_filter_downsample(&tx, &taps, 4, n).unwrap();
        let noisy = matched_filter_downsample(&rx_tx, &taps, 4, n).unwrap();
        let es = clean.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let noise = clean.iter().zip(&noisy).map(|(c, y)| (y - c).norm_sqr()).sum::<f64>();
        10.0 * (es / noise).log10()
    }

    #[test]
    fn infinite_snr_is_identity() {
        let x: Vec<Complex64> = (0..50).map(|k| Complex64::new(k as f64, -1.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_awgn(&x, f64::INFINITY, &mut rng), x);
    }

    #[test]
    fn snr_calibration_0db() {
        let m = measured_snr_db(0.0, 1);
        assert!((m - 0.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn snr_calibration_10db() {
        let m = measured_snr_db(10.0, 2);
        assert!((m - 10.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn noise_is_split_evenly() {
        let x = vec![Complex64::new(0.0, 0.0); 200_000];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = apply_awgn(&x, 3.0, &mut rng);
        let vi = y.iter().map(|z| z.re * z.re).sum::<f64>() / y.len() as f64;
        let vq = y.iter().map(|z| z.im * z.im).sum::<f64>() / y.len() as f64;
        let target = noise_variance(3.0) / 2.0;
        assert!((vi / target - 1.0).abs() < 0.02);
        assert!((vq / target - 1.0).abs() < 0.02);
    }
}
