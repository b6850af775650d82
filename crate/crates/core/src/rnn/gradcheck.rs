//! Analytic BPTT gradients against central finite differences, in f64.

use serde::Serialize;

use super::bptt::{loss_and_grad, supervised_loss, Batch, Supervision};
use super::spec::ModelSpec;
use super::weights::{ModelWeights, ParamLayout, TensorInfo};
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Gradient magnitudes below this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-10;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks every parameter (or those of tensors accepted by `select`) of the
/// final-symbol loss.
pub fn gradient_check(
    spec: &ModelSpec,
    weights: &ModelWeights,
    batch: &Batch<f64>,
    step: f64,
    select: impl Fn(&TensorInfo) -> bool,
) -> Result<GradCheckReport> {
    gradient_check_supervised(spec, weights, batch, Supervision::Final, step, select)
}

pub fn gradient_check_supervised(
    spec: &ModelSpec,
    weights: &ModelWeights,
    batch: &Batch<f64>,
    supervision: Supervision,
    step: f64,
    select: impl Fn(&TensorInfo) -> bool,
) -> Result<GradCheckReport> {
    let layout = ParamLayout::new(spec);
    let mut params: Vec<f64> = weights.params.iter().map(|&v| v as f64).collect();
    let mut grad = vec![0.0; layout.total];
    loss_and_grad::<f64, rand_chacha::ChaCha8Rng>(spec, &layout, &params, batch, supervision, None, &mut grad)?;
    let mean_loss = |p: &[f64]| supervised_loss(spec, &layout, p, batch, supervision);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, checked: 0 };
    for info in layout.tensors.iter().filter(|t| select(t)) {
        for i in info.range() {
            let orig = params[i];
            params[i] = orig + step;
            let up = mean_loss(&params)?;
            params[i] = orig - step;
            let down = mean_loss(&params)?;
            params[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grad[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = info.name.clone();
                report.worst_index = i - info.offset;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::spec::CellKind;
    use num_complex::Complex32;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(size: usize, steps: usize, seed: u64) -> Batch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs: Vec<Vec<Complex32>> = (0..size)
            .map(|_| (0..steps).map(|_| Complex32::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5))).collect())
            .collect();
        let refs: Vec<&[Complex32]> = seqs.iter().map(|s| s.as_slice()).collect();
        let labels: Vec<usize> = (0..size).map(|i| i % 5).collect();
        Batch::from_sequences(&refs, &labels).unwrap()
    }

    fn check(cell: CellKind, between: bool) -> GradCheckReport {
        let mut spec = ModelSpec::new(cell, 2, 8, 8);
        spec.dropout_between_layers = between;
        let w = ModelWeights::init(&spec, 5).unwrap();
        gradient_check(&spec, &w, &random_batch(4, 16, 7), 1e-3, |_| true).unwrap()
    }

    #[test]
    fn gru_2x8_len16() {
        let r = check(CellKind::Gru, false);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.checked, ParamLayout::new(&ModelSpec::new(CellKind::Gru, 2, 8, 8)).total);
    }

    #[test]
    fn every_step_loss_lstm_and_gru() {
        for cell in [CellKind::Lstm, CellKind::Gru] {
            let spec = ModelSpec::new(cell, 2, 8, 8);
            let mut w = ModelWeights::init(&spec, 6).unwrap();
            // every head row is supervised; keep the ReLUs away from their kink
            w.tensor_mut("fc.b").unwrap().iter_mut().for_each(|v| *v = 2.0);
            let batch = random_batch(3, 12, 8);
            let r = gradient_check_supervised(&spec, &w, &batch, Supervision::EveryStep, 1e-3, |_| true).unwrap();
            assert!(r.max_rel_error < 1e-4, "{cell:?} {r:?}");
        }
    }

    #[test]
    fn output_layer_only() {
        let spec = ModelSpec::new(CellKind::Gru, 1, 4, 6);
        let w = ModelWeights::init(&spec, 2).unwrap();
        let r = gradient_check(&spec, &w, &random_batch(3, 5, 1), 1e-3, |t| t.name.starts_with("out.")).unwrap();
        assert_eq!(r.checked, 5 * 6 + 5);
        // softmax curvature leaves an O(step^2) residue
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    /// A bare dense layer under a linear objective has no curvature, so
    /// central differences are exact up to rounding.
    #[test]
    fn single_linear_layer() {
        use crate::rnn::scalar::Real;
        let (b, n_in, n_out) = (3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = draw(b * n_in);
        let mut w = draw(n_out * n_in);
        let coef = draw(b * n_out);
        let objective = |w: &[f64]| {
            let mut y = vec![0.0; b * n_out];
            f64::gemm(b, n_in, n_out, &x, false, w, true, 0.0, &mut y);
            y.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>()
        };
        let mut analytic = vec![0.0; n_out * n_in];
        f64::gemm(n_out, b, n_in, &coef, true, &x, false, 0.0, &mut analytic);
        let mut worst = 0.0f64;
        for i in 0..w.len() {
            let orig = w[i];
            w[i] = orig + 1e-3;
            let up = objective(&w);
            w[i] = orig - 1e-3;
            let down = objective(&w);
            w[i] = orig;
            worst = worst.max(relative_error(analytic[i], (up - down) / 2e-3));
        }
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn dropout_between_layers_path() {
        let r = check(CellKind::Lstm, true);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn lstm_2x8_len16() {
        let r = check(CellKind::Lstm, false);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
