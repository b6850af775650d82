//! Root-raised-cosine pulse shaping and matched-filter reception.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShapeConfig {
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    /// Filter span in symbols; the filter has `span_symbols * samples_per_symbol + 1` taps.
    pub span_symbols: usize,
}

impl Default for PulseShapeConfig {
    fn default() -> Self {
        Self { rolloff: 0.35, samples_per_symbol: 4, span_symbols: 8 }
    }
}

impl PulseShapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::Config(format!("rolloff {} outside (0, 1]", self.rolloff)));
        }
        if self.samples_per_symbol < 2 {
            return Err(Error::Config(format!(
                "samples_per_symbol {} must be at least 2",
                self.samples_per_symbol
            )));
        }
        if self.span_symbols < 4 || self.span_symbols % 2 != 0 {
            return Err(Error::Config(format!(
                "span_symbols {} must be an even integer >= 4",
                self.span_symbols
            )));
        }
        Ok(())
    }

    pub fn num_taps(&self) -> usize {
        self.span_symbols * self.samples_per_symbol + 1
    }
}

/// Closed-form RRC impulse response at `t` symbol periods.
fn rrc_value(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let four_bt = 4.0 * beta * t;
    if (1.0 - four_bt * four_bt).abs() < 1e-10 {
        let arg = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + four_bt * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - four_bt * four_bt);
    num / den
}

/// Unit-energy RRC taps, symmetric about the centre tap.
pub fn design_rrc(cfg: &PulseShapeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.num_taps();
    let half = (n - 1) as isize / 2;
    let sps = cfg.samples_per_symbol as f64;
    let mut taps: Vec<f64> = (0..n as isize)
        .map(|i| rrc_value((i - half) as f64 / sps, cfg.rolloff))
        .collect();
    // mirror so the two halves are bit-identical
    for i in 0..half as usize {
        taps[n - 1 - i] = taps[i];
    }
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    Ok(taps)
}

/// Zero-stuffs by `sps` and convolves with `taps` (full convolution).
pub fn pulse_shape(symbols: &[Complex64], taps: &[f64], sps: usize) -> Result<Vec<Complex64>> {
    if symbols.is_empty() {
        return Err(Error::Empty("pulse_shape symbols"));
    }
    if taps.is_empty() {
        return Err(Error::Empty("pulse_shape taps"));
    }
    if sps == 0 {
        return Err(Error::Config("samples per symbol must be positive".into()));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); sps * symbols.len() + taps.len() - 1];
    for (k, &s) in symbols.iter().enumerate() {
        let base = k * sps;
        for (j, &h) in taps.iter().enumerate() {
            out[base + j] += s * h;
        }
    }
    Ok(out)
}

/// Matched filter followed by symbol-rate sampling at the peak of the
/// cascaded response (delay of `taps.len() - 1` samples).
pub fn matched_filter_downsample(
    samples: &[Complex64],
    taps: &[f64],
    sps: usize,
    n_symbols: usize,
) -> Result<Vec<Complex64>> {
    if taps.is_empty() || sps == 0 {
        return Err(Error::Config("matched filter needs taps and sps > 0".into()));
    }
    let delay = taps.len() - 1;
    if n_symbols == 0 {
        return Ok(Vec::new());
    }
    let last = delay + (n_symbols - 1) * sps;
    if last >= samples.len() {
        return Err(Error::InsufficientSamples { needed: last + 1, available: samples.len() });
    }
    let out = (0..n_symbols)
        .map(|k| {
            let idx = delay + k * sps;
            // full-convolution output y[idx] = sum_j h[j] x[idx - j]
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &h) in taps.iter().enumerate() {
                if let Some(x) = idx.checked_sub(j).and_then(|i| samples.get(i)) {
                    acc += x * h;
                }
            }
            acc
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Self-convolution of the taps sampled every `sps` samples around the peak.
    fn nyquist_samples(taps: &[f64], sps: usize) -> (f64, f64) {
        let n = taps.len();
        let mut full = vec![0.0; 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                full[i + j] += taps[i] * taps[j];
            }
        }
        let centre = n - 1;
        let mut worst = 0.0f64;
        let mut k = sps;
        while k <= centre {
            worst = worst.max(full[centre - k].abs()).max(full[centre + k].abs());
            k += sps;
        }
        (full[centre], worst)
    }

    #[test]
    fn span8_has_33_symmetric_unit_energy_taps() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        assert_eq!(taps.len(), 33);
        let rev: Vec<f64> = taps.iter().rev().copied().collect();
        assert_eq!(taps, rev);
        let energy: f64 = taps.iter().map(|t| t * t).sum();
        assert!((energy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nyquist_property_span8() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let (centre, worst) = nyquist_samples(&taps, 4);
        assert!((centre - 1.0).abs() < 1e-12);
        assert!(worst < 2e-2, "{worst}");
    }

    #[test]
    fn nyquist_property_span16() {
        let cfg = PulseShapeConfig { span_symbols: 16, ..Default::default() };
        let taps = design_rrc(&cfg).unwrap();
        let (_, worst) = nyquist_samples(&taps, 4);
        assert!(worst < 2e-3, "{worst}");
    }

    #[test]
    fn symmetric_for_any_rolloff_including_singular_points() {
        // beta = 0.25 and 0.5 put t = 1/(4 beta) exactly on a sample
        for beta in [0.1, 0.25, 0.35, 0.5, 1.0] {
            let cfg = PulseShapeConfig { rolloff: beta, samples_per_symbol: 4, span_symbols: 8 };
            let taps = design_rrc(&cfg).unwrap();
            assert!(taps.iter().all(|t| t.is_finite()));
            let rev: Vec<f64> = taps.iter().rev().copied().collect();
            assert_eq!(taps, rev);
        }
    }

    #[test]
    fn singular_limit_is_continuous() {
        let beta = 0.25;
        let t0 = 1.0 / (4.0 * beta);
        let at = rrc_value(t0, beta);
        let near = rrc_value(t0 + 1e-6, beta);
        assert!((at - near).abs() < 1e-5, "{at} vs {near}");
        let near0 = rrc_value(1e-7, beta);
        assert!((rrc_value(0.0, beta) - near0).abs() < 1e-6);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            PulseShapeConfig { rolloff: 0.0, ..Default::default() },
            PulseShapeConfig { rolloff: 1.2, ..Default::default() },
            PulseShapeConfig { samples_per_symbol: 1, ..Default::default() },
            PulseShapeConfig { span_symbols: 7, ..Default::default() },
            PulseShapeConfig { span_symbols: 2, ..Default::default() },
        ] {
            assert!(matches!(design_rrc(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn impulse_response() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let out = pulse_shape(&[Complex64::new(1.0, 0.0)], &taps, 4).unwrap();
        assert_eq!(out.len(), taps.len() + 3);
        for (o, t) in out.iter().zip(&taps) {
            assert_eq!(o.re, *t);
            assert_eq!(o.im, 0.0);
        }
        assert!(out[taps.len()..].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn two_symbols_are_shifted_copies() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let a = Complex64::new(0.5, -1.0);
        let b = Complex64::new(-0.25, 2.0);
        let out = pulse_shape(&[a, b], &taps, 4).unwrap();
        let mut expected = vec![Complex64::new(0.0, 0.0); 8 + taps.len() - 1];
        for (j, &h) in taps.iter().enumerate() {
            expected[j] += a * h;
            expected[4 + j] += b * h;
        }
        for (o, e) in out.iter().zip(&expected) {
            assert!((o - e).norm() < 1e-15);
        }
    }

    #[test]
    fn linearity() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let a: Vec<Complex64> = (0..20).map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let b: Vec<Complex64> = (0..20).map(|k| Complex64::new(0.1 * k as f64, -0.7)).collect();
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ya = pulse_shape(&a, &taps, 4).unwrap();
        let yb = pulse_shape(&b, &taps, 4).unwrap();
        let ys = pulse_shape(&sum, &taps, 4).unwrap();
        for i in 0..ys.len() {
            assert!((ys[i] - ya[i] - yb[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        assert!(matches!(pulse_shape(&[], &taps, 4), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_in_zero_out() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let zeros = vec![Complex64::new(0.0, 0.0); 200];
        let rx = matched_filter_downsample(&zeros, &taps, 4, 10).unwrap();
        assert!(rx.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn insufficient_samples() {
        let taps = design_rrc(&PulseShapeConfig::default()).unwrap();
        let short = vec![Complex64::new(0.0, 0.0); 40];
        assert!(matches!(
            matched_filter_downsample(&short, &taps, 4, 10),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
