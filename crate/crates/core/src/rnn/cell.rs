//! Single-stream GRU and LSTM cell updates.
//!
//! Gate order follows the common convention: LSTM `[i, f, g, o]`,
//! GRU `[r, z, n]` with the reset gate applied to the recurrent part of the
//! candidate, `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))`.

use super::scalar::{sigmoid, Real};
use super::spec::CellKind;
use crate::error::{Error, Result};

/// Borrowed weights of one recurrent layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a, T> {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ih: &'a [T],
    pub w_hh: &'a [T],
    pub b_ih: &'a [T],
    pub b_hh: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub h: Vec<T>,
    /// Cell vector; empty for GRU.
    pub c: Vec<T>,
}

impl<T: Real> LayerState<T> {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        let c = match kind {
            CellKind::Lstm => vec![T::zero(); hidden],
            CellKind::Gru => Vec::new(),
        };
        Self { h: vec![T::zero(); hidden], c }
    }
}

impl<'a, T: Real> LayerView<'a, T> {
    fn check(&self, input: &[T], state: &LayerState<T>) -> Result<()> {
        let g = self.kind.gates() * self.hidden_size;
        if self.w_ih.len() != g * self.input_size
            || self.w_hh.len() != g * self.hidden_size
            || self.b_ih.len() != g
            || self.b_hh.len() != g
        {
            return Err(Error::Dimension("layer weights do not match the declared sizes".into()));
        }
        if input.len() != self.input_size {
            return Err(Error::Dimension(format!("input length {} != {}", input.len(), self.input_size)));
        }
        let c_len = if self.kind == CellKind::Lstm { self.hidden_size } else { 0 };
        if state.h.len() != self.hidden_size || state.c.len() != c_len {
            return Err(Error::Dimension("state does not match hidden size".into()));
        }
        Ok(())
    }
}

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T], ops: &mut u64) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&w[r * cols..(r + 1) * cols], x);
    }
    *ops += (out.len() * cols) as u64;
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone, Default)]
pub struct CellScratch<T> {
    gx: Vec<T>,
    gh: Vec<T>,
}

/// Advances `state` by one input in place; `ops` accumulates multiply-adds
/// and nonlinearity evaluations.
pub fn cell_step_into<T: Real>(
    layer: &LayerView<'_, T>,
    input: &[T],
    state: &mut LayerState<T>,
    scratch: &mut CellScratch<T>,
    ops: &mut u64,
) -> Result<()> {
    layer.check(input, state)?;
    let h = layer.hidden_size;
    let g = layer.kind.gates() * h;
    scratch.gx.resize(g, T::zero());
    scratch.gh.resize(g, T::zero());
    affine(layer.w_ih, layer.b_ih, input, &mut scratch.gx, ops);
    affine(layer.w_hh, layer.b_hh, &state.h, &mut scratch.gh, ops);
    let (gx, gh) = (&scratch.gx, &scratch.gh);
    match layer.kind {
        CellKind::Lstm => {
            for j in 0..h {
                let i = sigmoid(gx[j] + gh[j]);
                let f = sigmoid(gx[h + j] + gh[h + j]);
                let gg = (gx[2 * h + j] + gh[2 * h + j]).act_tanh();
                let o = sigmoid(gx[3 * h + j] + gh[3 * h + j]);
                let c = f * state.c[j] + i * gg;
                state.c[j] = c;
                state.h[j] = o * c.act_tanh();
            }
            *ops += 5 * h as u64;
        }
        CellKind::Gru => {
            for j in 0..h {
                let r = sigmoid(gx[j] + gh[j]);
                let z = sigmoid(gx[h + j] + gh[h + j]);
                let n = (gx[2 * h + j] + r * gh[2 * h + j]).act_tanh();
                state.h[j] = (T::one() - z) * n + z * state.h[j];
            }
            *ops += 3 * h as u64;
        }
    }
    Ok(())
}

/// Pure form of [`cell_step_into`]: returns the layer output and new state.
pub fn cell_step<T: Real>(
    layer: &LayerView<'_, T>,
    input: &[T],
    state: &LayerState<T>,
) -> Result<(Vec<T>, LayerState<T>)> {
    let mut next = state.clone();
    let mut ops = 0;
    cell_step_into(layer, input, &mut next, &mut CellScratch::default(), &mut ops)?;
    Ok((next.h.clone(), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        kind: CellKind,
        n_in: usize,
        h: usize,
        w_ih: Vec<f64>,
        w_hh: Vec<f64>,
        b_ih: Vec<f64>,
        b_hh: Vec<f64>,
    }

    impl Owned {
        fn random(kind: CellKind, n_in: usize, h: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = kind.gates() * h;
            let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            Owned { kind, n_in, h, w_ih: draw(g * n_in), w_hh: draw(g * h), b_ih: draw(g), b_hh: draw(g) }
        }

        fn zeros(kind: CellKind, n_in: usize, h: usize) -> Self {
            let g = kind.gates() * h;
            Owned { kind, n_in, h, w_ih: vec![0.0; g * n_in], w_hh: vec![0.0; g * h], b_ih: vec![0.0; g], b_hh: vec![0.0; g] }
        }

        fn view(&self) -> LayerView<'_, f64> {
            LayerView {
                kind: self.kind,
                input_size: self.n_in,
                hidden_size: self.h,
                w_ih: &self.w_ih,
                w_hh: &self.w_hh,
                b_ih: &self.b_ih,
                b_hh: &self.b_hh,
            }
        }

        /// Pre-activation of gate block `gate`, unit `j`, from input and hidden parts.
        fn parts(&self, gate: usize, j: usize, x: &[f64], hp: &[f64]) -> (f64, f64) {
            let row = gate * self.h + j;
            let mut a = self.b_ih[row];
            for k in 0..self.n_in {
                a += self.w_ih[row * self.n_in + k] * x[k];
            }
            let mut b = self.b_hh[row];
            for k in 0..self.h {
                b += self.w_hh[row * self.h + k] * hp[k];
            }
            (a, b)
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let w = Owned::zeros(CellKind::Gru, 2, 4);
        let state = LayerState { h: vec![0.8, -0.4, 0.2, 1.0], c: vec![] };
        let (out, next) = cell_step(&w.view(), &[3.0, -7.0], &state).unwrap();
        assert_eq!(out, vec![0.4, -0.2, 0.1, 0.5]);
        assert_eq!(next.h, out);
    }

    #[test]
    fn lstm_zero_weights_zero_state() {
        let w = Owned::zeros(CellKind::Lstm, 2, 3);
        let state = LayerState::<f64>::zeros(CellKind::Lstm, 3);
        let (out, next) = cell_step(&w.view(), &[0.5, -0.5], &state).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert_eq!(next.c, vec![0.0; 3]);
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let w = Owned::random(CellKind::Gru, 2, 3, 17);
        let x = [0.3, -1.1];
        let hp = vec![0.2, -0.5, 0.9];
        let (out, _) = cell_step(&w.view(), &x, &LayerState { h: hp.clone(), c: vec![] }).unwrap();
        for j in 0..3 {
            let (rx, rh) = w.parts(0, j, &x, &hp);
            let (zx, zh) = w.parts(1, j, &x, &hp);
            let (nx, nh) = w.parts(2, j, &x, &hp);
            let r = sig(rx + rh);
            let z = sig(zx + zh);
            let n = (nx + r * nh).tanh();
            let expect = (1.0 - z) * n + z * hp[j];
            assert!((out[j] - expect).abs() < 1e-14, "{j}: {} vs {expect}", out[j]);
        }
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let w = Owned::random(CellKind::Lstm, 2, 3, 23);
        let x = [-0.7, 0.4];
        let hp = vec![0.1, 0.6, -0.3];
        let cp = vec![-0.5, 0.25, 1.5];
        let (out, next) = cell_step(&w.view(), &x, &LayerState { h: hp.clone(), c: cp.clone() }).unwrap();
        for j in 0..3 {
            let pre = |gate| {
                let (a, b) = w.parts(gate, j, &x, &hp);
                a + b
            };
            let i = sig(pre(0));
            let f = sig(pre(1));
            let g = pre(2).tanh();
            let o = sig(pre(3));
            let c = f * cp[j] + i * g;
            assert!((next.c[j] - c).abs() < 1e-14);
            assert!((out[j] - o * c.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let w = Owned::zeros(CellKind::Gru, 2, 3);
        let state = LayerState::<f64>::zeros(CellKind::Gru, 3);
        assert!(matches!(cell_step(&w.view(), &[1.0], &state), Err(Error::Dimension(_))));
        let bad = LayerState::<f64>::zeros(CellKind::Lstm, 3);
        assert!(matches!(cell_step(&w.view(), &[1.0, 2.0], &bad), Err(Error::Dimension(_))));
    }
}
