//! Symbol-by-symbol inference with carried hidden state.

use std::io::Write;

use num_complex::Complex32;

use super::cell::{cell_step_into, CellScratch, LayerState, LayerView};
use super::spec::OUTPUT_SIZE;
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::signal_gen::SignalExample;

/// One softmax output row.
pub type Softmax = [f32; OUTPUT_SIZE];

/// Per-layer recurrent state of one evaluation stream.
#[derive(Debug, Clone)]
pub struct HiddenState {
    pub layers: Vec<LayerState<f32>>,
    scratch: CellScratch<f32>,
    fc: Vec<f32>,
    steps: usize,
    last_step_ops: u64,
}

impl HiddenState {
    /// Zero state for the start of a sequence.
    pub fn new(weights: &ModelWeights) -> Self {
        let spec = &weights.spec;
        Self {
            layers: (0..spec.num_layers).map(|_| LayerState::zeros(spec.cell, spec.hidden_size)).collect(),
            scratch: CellScratch::default(),
            fc: vec![0.0; spec.linear_size],
            steps: 0,
            last_step_ops: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Arithmetic operations spent by the most recent step.
    pub fn last_step_ops(&self) -> u64 {
        self.last_step_ops
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.h.iter().chain(&l.c).all(|v| v.is_finite()))
    }
}

impl PartialEq for HiddenState {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.steps == other.steps
    }
}

impl ModelWeights {
    pub fn layer_view(&self, l: usize) -> LayerView<'_, f32> {
        let slots = self.layout().layer(l);
        LayerView {
            kind: self.spec.cell,
            input_size: self.spec.layer_input_size(l),
            hidden_size: self.spec.hidden_size,
            w_ih: self.tensor_at(slots.w_ih),
            w_hh: self.tensor_at(slots.w_hh),
            b_ih: self.tensor_at(slots.b_ih),
            b_hh: self.tensor_at(slots.b_hh),
        }
    }
}

/// Numerically stable softmax, evaluated in f64.
pub fn softmax(logits: &[f64; OUTPUT_SIZE]) -> [f64; OUTPUT_SIZE] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; OUTPUT_SIZE];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Runs the whole network on one received symbol (dropout disabled).
pub fn forward_step(weights: &ModelWeights, symbol: Complex32, state: &mut HiddenState) -> Result<Softmax> {
    if !symbol.re.is_finite() || !symbol.im.is_finite() {
        return Err(Error::NonFinite(format!("input symbol {symbol}")));
    }
    let spec = &weights.spec;
    if state.layers.len() != spec.num_layers {
        return Err(Error::Dimension("hidden state has the wrong number of layers".into()));
    }
    let mut ops = 0u64;
    let input = [symbol.re, symbol.im];
    for l in 0..spec.num_layers {
        let view = weights.layer_view(l);
        let (below, rest) = state.layers.split_at_mut(l);
        let x: &[f32] = if l == 0 { &input } else { &below[l - 1].h };
        cell_step_into(&view, x, &mut rest[0], &mut state.scratch, &mut ops)?;
    }
    let layout = weights.layout();
    let top = &state.layers[spec.num_layers - 1].h;
    let h = spec.hidden_size;
    let fc_w = &weights.params[layout.fc_w().range()];
    let fc_b = &weights.params[layout.fc_b().range()];
    for (j, y) in state.fc.iter_mut().enumerate() {
        let row = &fc_w[j * h..(j + 1) * h];
        let acc = row.iter().zip(top).fold(fc_b[j], |a, (w, x)| a + w * x);
        *y = acc.max(0.0);
    }
    ops += (spec.linear_size * h) as u64;
    let out_w = &weights.params[layout.out_w().range()];
    let out_b = &weights.params[layout.out_b().range()];
    let k = spec.linear_size;
    let mut logits = [0.0f64; OUTPUT_SIZE];
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &out_w[c * k..(c + 1) * k];
        *logit = row.iter().zip(&state.fc).fold(out_b[c], |a, (w, y)| a + w * y) as f64;
    }
    ops += (OUTPUT_SIZE * k + OUTPUT_SIZE) as u64;
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("network logits".into()));
    }
    let p = softmax(&logits);
    state.steps += 1;
    state.last_step_ops = ops;
    Ok(p.map(|v| v as f32))
}

/// Per-symbol softmax outputs for one example.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoftmaxTrajectory {
    pub rows: Vec<Softmax>,
}

pub const TRAJECTORY_HEADER: [&str; 6] = ["symbol_index", "p_bpsk", "p_qpsk", "p_8psk", "p_16qam", "p_64qam"];

impl SoftmaxTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with one row per processed symbol (1-based index).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAJECTORY_HEADER)?;
        for (t, row) in self.rows.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Folds [`forward_step`] over every symbol from a zero state.
pub fn forward_trajectory(weights: &ModelWeights, example: &SignalExample) -> Result<SoftmaxTrajectory> {
    forward_symbols(weights, &example.symbols)
}

pub fn forward_symbols(weights: &ModelWeights, symbols: &[Complex32]) -> Result<SoftmaxTrajectory> {
    if symbols.is_empty() {
        return Err(Error::Empty("forward_trajectory example"));
    }
    let mut state = HiddenState::new(weights);
    let rows = symbols
        .iter()
        .map(|&s| forward_step(weights, s, &mut state))
        .collect::<Result<Vec<_>>>()?;
    Ok(SoftmaxTrajectory { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::spec::{CellKind, ModelSpec};
    use crate::signal_gen::ModulationClass;

    fn symbols(n: usize) -> Vec<Complex32> {
        (0..n).map(|k| Complex32::new((k as f32 * 0.7).sin(), (k as f32 * 1.3).cos())).collect()
    }

    #[test]
    fn softmax_rows_normalized() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let w = ModelWeights::init(&ModelSpec::new(cell, 2, 8, 6), 3).unwrap();
            let traj = forward_symbols(&w, &symbols(50)).unwrap();
            for row in &traj.rows {
                let s: f64 = row.iter().map(|&p| p as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let w = ModelWeights::zeros(&ModelSpec::reference(1).unwrap()).unwrap();
        let mut st = HiddenState::new(&w);
        let p = forward_step(&w, Complex32::new(0.3, -0.9), &mut st).unwrap();
        assert_eq!(p, [0.2; 5]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let w = ModelWeights::init(&ModelSpec::new(CellKind::Gru, 1, 4, 4), 0).unwrap();
        let mut st = HiddenState::new(&w);
        assert!(matches!(forward_step(&w, Complex32::new(f32::NAN, 0.0), &mut st), Err(Error::NonFinite(_))));
    }

    #[test]
    fn length_one_matches_single_step() {
        let w = ModelWeights::init(&ModelSpec::new(CellKind::Lstm, 2, 5, 3), 4).unwrap();
        let ex = SignalExample { symbols: symbols(1), label: ModulationClass::Bpsk, snr_db: 0, seed: 0 };
        let traj = forward_trajectory(&w, &ex).unwrap();
        let mut st = HiddenState::new(&w);
        assert_eq!(traj.rows, vec![forward_step(&w, ex.symbols[0], &mut st).unwrap()]);
    }

    #[test]
    fn prefix_rerun_oracle() {
        // each row recomputed from scratch on its own prefix
        let w = ModelWeights::init(&ModelSpec::new(CellKind::Gru, 3, 6, 4), 8).unwrap();
        let syms = symbols(24);
        let traj = forward_symbols(&w, &syms).unwrap();
        for t in 1..=syms.len() {
            let prefix = forward_symbols(&w, &syms[..t]).unwrap();
            assert_eq!(prefix.rows[t - 1], traj.rows[t - 1]);
        }
        assert_eq!(forward_symbols(&w, &syms).unwrap(), traj);
    }

    #[test]
    fn constant_cost_per_symbol() {
        let w = ModelWeights::init(&ModelSpec::reference(1).unwrap(), 1).unwrap();
        let syms = symbols(1000);
        let mut st = HiddenState::new(&w);
        let mut first = 0;
        for (t, &s) in syms.iter().enumerate() {
            forward_step(&w, s, &mut st).unwrap();
            if t == 0 {
                first = st.last_step_ops();
            }
        }
        assert!(first > 0);
        assert_eq!(st.last_step_ops(), first);
        assert_eq!(st.steps(), 1000);
        assert!(st.is_finite());
    }

    #[test]
    fn csv_has_fixed_header() {
        let traj = SoftmaxTrajectory { rows: vec![[0.2; 5], [0.1, 0.2, 0.3, 0.2, 0.2]] };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "symbol_index,p_bpsk,p_qpsk,p_8psk,p_16qam,p_64qam");
        assert!(lines.next().unwrap().starts_with("1,0.2"));
        assert_eq!(lines.count(), 1);
    }
}
