//! Batched forward pass and backpropagation through time.
//!
//! The loss is the cross-entropy of the softmax after the final symbol, or
//! optionally its mean over every symbol. Reported statistics always use the
//! final symbol.
//! Activations are time-major: row `t * batch + b` holds example `b` at step `t`.
//! Each layer is processed over the whole sequence before the next one, so
//! the input projections of a layer are a single matrix product and only the
//! recurrent projections are evaluated step by step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Real;
use super::spec::{CellKind, ModelSpec, INPUT_SIZE, OUTPUT_SIZE};
use super::weights::ParamLayout;
use crate::error::{Error, Result};

/// Time-major mini-batch of (I, Q) sequences with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub steps: usize,
    pub size: usize,
    pub inputs: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    /// Builds a batch from per-example symbol slices of equal length.
    pub fn from_sequences(seqs: &[&[num_complex::Complex32]], labels: &[usize]) -> Result<Self> {
        let size = seqs.len();
        if size == 0 || size != labels.len() {
            return Err(Error::Dimension("batch needs one label per sequence".into()));
        }
        let steps = seqs[0].len();
        if steps == 0 || seqs.iter().any(|s| s.len() != steps) {
            return Err(Error::Dimension("batch sequences must share a non-zero length".into()));
        }
        let mut inputs = vec![T::zero(); steps * size * INPUT_SIZE];
        for (b, seq) in seqs.iter().enumerate() {
            for (t, z) in seq.iter().enumerate() {
                let row = (t * size + b) * INPUT_SIZE;
                inputs[row] = T::from_f32(z.re).unwrap();
                inputs[row + 1] = T::from_f32(z.im).unwrap();
            }
        }
        Ok(Self { steps, size, inputs, labels: labels.to_vec() })
    }
}

/// Summed loss and hit count over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl BatchStats {
    pub fn merge(&mut self, other: BatchStats) {
        self.loss_sum += other.loss_sum;
        self.correct += other.correct;
        self.count += other.count;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }
}

struct LayerCache<T> {
    /// Layer input, `TB x in`.
    x: Vec<T>,
    /// Post-activation gates, `TB x G*H`.
    gates: Vec<T>,
    /// Cell state and its tanh (LSTM), `TB x H`.
    c: Vec<T>,
    tc: Vec<T>,
    /// Recurrent candidate pre-activation `W_hn h + b_hn` (GRU), `TB x H`.
    hn: Vec<T>,
    h: Vec<T>,
    /// Dropout mask applied to the input of this layer, when any.
    in_mask: Option<Vec<T>>,
}

struct HeadCache<T> {
    h_drop: Vec<T>,
    mask: Option<Vec<T>>,
    z1: Vec<T>,
    a1: Vec<T>,
    probs: Vec<T>,
}

/// Which symbols contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    #[default]
    Final,
    EveryStep,
}

impl Supervision {
    fn first_step(self, steps: usize) -> usize {
        match self {
            Supervision::Final => steps - 1,
            Supervision::EveryStep => 0,
        }
    }
}

struct Dims {
    steps: usize,
    batch: usize,
    hidden: usize,
    gates: usize,
}

fn add_bias_rows<T: Real>(m: &mut [T], bias: &[T]) {
    for row in m.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += *b);
    }
}

fn col_sums_into<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += *v);
    }
}

fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
}

fn layer_forward<T: Real>(kind: CellKind, d: &Dims, x: Vec<T>, in_mask: Option<Vec<T>>, w: [&[T]; 4]) -> LayerCache<T> {
    let [w_ih, w_hh, b_ih, b_hh] = w;
    let (tb, h, g, b) = (d.steps * d.batch, d.hidden, d.gates, d.batch);
    let in_size = x.len() / tb;
    let mut gates = vec![T::zero(); tb * g];
    T::gemm(tb, in_size, g, &x, false, w_ih, true, T::zero(), &mut gates);
    add_bias_rows(&mut gates, b_ih);
    let mut hs = vec![T::zero(); tb * h];
    let lstm = kind == CellKind::Lstm;
    let mut cs = if lstm { vec![T::zero(); tb * h] } else { Vec::new() };
    let mut tcs = if lstm { vec![T::zero(); tb * h] } else { Vec::new() };
    let mut hn = if lstm { Vec::new() } else { vec![T::zero(); tb * h] };
    let mut gh = vec![T::zero(); b * g];
    let one = T::one();
    for t in 0..d.steps {
        if t == 0 {
            gh.iter_mut().for_each(|v| *v = T::zero());
        } else {
            let prev = &hs[(t - 1) * b * h..t * b * h];
            T::gemm(b, h, g, prev, false, w_hh, true, T::zero(), &mut gh);
        }
        add_bias_rows(&mut gh, b_hh);
        let (cur, past) = (t * b * h..(t + 1) * b * h, (t.max(1) - 1) * b * h..t.max(1) * b * h);
        let gblock = &mut gates[t * b * g..(t + 1) * b * g];
        match kind {
            CellKind::Lstm => {
                gblock.iter_mut().zip(&gh).for_each(|(v, r)| *v += *r);
                for gr in gblock.chunks_mut(g) {
                    T::sigmoid_in_place(&mut gr[..2 * h]);
                    T::tanh_in_place(&mut gr[2 * h..3 * h]);
                    T::sigmoid_in_place(&mut gr[3 * h..]);
                }
                for bi in 0..b {
                    let gr = &gblock[bi * g..(bi + 1) * g];
                    let (i, f, gg) = (&gr[..h], &gr[h..2 * h], &gr[2 * h..3 * h]);
                    let row = cur.start + bi * h..cur.start + (bi + 1) * h;
                    if t == 0 {
                        for j in 0..h {
                            cs[row.start + j] = i[j] * gg[j];
                        }
                    } else {
                        let (before, after) = cs.split_at_mut(cur.start);
                        let c_prev = &before[past.start + bi * h..past.start + (bi + 1) * h];
                        let c = &mut after[bi * h..(bi + 1) * h];
                        for j in 0..h {
                            c[j] = f[j] * c_prev[j] + i[j] * gg[j];
                        }
                    }
                    tcs[row.clone()].copy_from_slice(&cs[row.clone()]);
                    T::tanh_in_place(&mut tcs[row.clone()]);
                    let o = &gr[3 * h..];
                    for ((hv, tc), ov) in hs[row.clone()].iter_mut().zip(&tcs[row]).zip(o) {
                        *hv = *ov * *tc;
                    }
                }
            }
            CellKind::Gru => {
                for (bi, gr) in gblock.chunks_mut(g).enumerate() {
                    let ghr = &gh[bi * g..(bi + 1) * g];
                    gr[..2 * h].iter_mut().zip(&ghr[..2 * h]).for_each(|(v, r)| *v += *r);
                    T::sigmoid_in_place(&mut gr[..2 * h]);
                    let (rz, nn) = gr.split_at_mut(2 * h);
                    let rec = &ghr[2 * h..];
                    for j in 0..h {
                        nn[j] += rz[j] * rec[j];
                    }
                    T::tanh_in_place(nn);
                    let row = cur.start + bi * h..cur.start + (bi + 1) * h;
                    hn[row.clone()].copy_from_slice(rec);
                    let z = &rz[h..];
                    if t == 0 {
                        for j in 0..h {
                            hs[row.start + j] = (one - z[j]) * nn[j];
                        }
                    } else {
                        let (before, after) = hs.split_at_mut(cur.start);
                        let h_prev = &before[past.start + bi * h..past.start + (bi + 1) * h];
                        let hv = &mut after[bi * h..(bi + 1) * h];
                        for j in 0..h {
                            hv[j] = (one - z[j]) * nn[j] + z[j] * h_prev[j];
                        }
                    }
                }
            }
        }
    }
    LayerCache { x, gates, c: cs, tc: tcs, hn, h: hs, in_mask }
}

/// Backward through one layer. `dh_out` is the gradient arriving at the layer
/// outputs (`TB x H`). Accumulates weight gradients into `grads` and returns
/// the gradient with respect to the layer input when `want_dx`.
fn layer_backward<T: Real>(
    kind: CellKind,
    d: &Dims,
    cache: &LayerCache<T>,
    w: [&[T]; 4],
    dh_out: &[T],
    grads: [&mut [T]; 4],
    want_dx: bool,
) -> Option<Vec<T>> {
    let [w_ih, w_hh, _, _] = w;
    let [g_wih, g_whh, g_bih, g_bhh] = grads;
    let (tb, h, g, b) = (d.steps * d.batch, d.hidden, d.gates, d.batch);
    let in_size = cache.x.len() / tb;
    let one = T::one();
    let mut dpre_x = vec![T::zero(); tb * g];
    let mut dpre_h = if kind == CellKind::Gru { vec![T::zero(); tb * g] } else { Vec::new() };
    let mut dh_next = vec![T::zero(); b * h];
    let mut dc_next = vec![T::zero(); if kind == CellKind::Lstm { b * h } else { 0 }];
    let mut dh_direct = vec![T::zero(); b * h];
    for t in (0..d.steps).rev() {
        for bi in 0..b {
            let row = t * b + bi;
            let prev_row = if t == 0 { None } else { Some(row - b) };
            let gr = &cache.gates[row * g..(row + 1) * g];
            let dp = &mut dpre_x[row * g..(row + 1) * g];
            match kind {
                CellKind::Lstm => {
                    for j in 0..h {
                        let dh = dh_out[row * h + j] + dh_next[bi * h + j];
                        let (i, f, gg, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                        let c_prev = prev_row.map_or(T::zero(), |p| cache.c[p * h + j]);
                        let tc = cache.tc[row * h + j];
                        let d_o = dh * tc;
                        let dc = dc_next[bi * h + j] + dh * o * (one - tc * tc);
                        dc_next[bi * h + j] = dc * f;
                        dp[j] = dc * gg * i * (one - i);
                        dp[h + j] = dc * c_prev * f * (one - f);
                        dp[2 * h + j] = dc * i * (one - gg * gg);
                        dp[3 * h + j] = d_o * o * (one - o);
                    }
                }
                CellKind::Gru => {
                    let dph = &mut dpre_h[row * g..(row + 1) * g];
                    for j in 0..h {
                        let dh = dh_out[row * h + j] + dh_next[bi * h + j];
                        let (r, z, n) = (gr[j], gr[h + j], gr[2 * h + j]);
                        let h_prev = prev_row.map_or(T::zero(), |p| cache.h[p * h + j]);
                        let dn = dh * (one - z);
                        let dz = dh * (h_prev - n);
                        dh_direct[bi * h + j] = dh * z;
                        let dpn = dn * (one - n * n);
                        let dr = dpn * cache.hn[row * h + j];
                        let dpr = dr * r * (one - r);
                        let dpz = dz * z * (one - z);
                        dp[j] = dpr;
                        dp[h + j] = dpz;
                        dp[2 * h + j] = dpn;
                        dph[j] = dpr;
                        dph[h + j] = dpz;
                        dph[2 * h + j] = dpn * r;
                    }
                }
            }
        }
        if t > 0 {
            let rows = t * b * g..(t + 1) * b * g;
            match kind {
                CellKind::Lstm => T::gemm(b, g, h, &dpre_x[rows], false, w_hh, false, T::zero(), &mut dh_next),
                CellKind::Gru => {
                    dh_next.copy_from_slice(&dh_direct);
                    T::gemm(b, g, h, &dpre_h[rows], false, w_hh, false, one, &mut dh_next);
                }
            }
        }
    }
    let dpre_rec = if kind == CellKind::Gru { &dpre_h } else { &dpre_x };
    T::gemm(g, tb, in_size, &dpre_x, true, &cache.x, false, one, g_wih);
    col_sums_into(&dpre_x, g, g_bih);
    if d.steps > 1 {
        let n = (d.steps - 1) * b;
        T::gemm(g, n, h, &dpre_rec[b * g..], true, &cache.h[..n * h], false, one, g_whh);
    }
    col_sums_into(dpre_rec, g, g_bhh);
    want_dx.then(|| {
        let mut dx = vec![T::zero(); tb * in_size];
        T::gemm(tb, g, in_size, &dpre_x, false, w_ih, false, T::zero(), &mut dx);
        dx
    })
}

/// Mutable views of the four tensors of one layer inside a flat gradient.
fn layer_grads<'a, T>(layout: &ParamLayout, l: usize, grad: &'a mut [T]) -> [&'a mut [T]; 4] {
    let s = layout.layer(l);
    let r = [s.w_ih, s.w_hh, s.b_ih, s.b_hh].map(|i| layout.tensors[i].range());
    // tensors of a layer are contiguous and in slot order
    let (_, rest) = grad.split_at_mut(r[0].start);
    let (a, rest) = rest.split_at_mut(r[0].len());
    let (b, rest) = rest.split_at_mut(r[1].len());
    let (c, rest) = rest.split_at_mut(r[2].len());
    let (d, _) = rest.split_at_mut(r[3].len());
    [a, b, c, d]
}

fn layer_weights<'a, T>(layout: &ParamLayout, l: usize, params: &'a [T]) -> [&'a [T]; 4] {
    let s = layout.layer(l);
    [s.w_ih, s.w_hh, s.b_ih, s.b_hh].map(|i| layout.slice(params, i))
}

struct Forward<T> {
    layers: Vec<LayerCache<T>>,
    head: HeadCache<T>,
    stats: BatchStats,
    /// Mean cross-entropy over the supervised rows.
    loss: f64,
}

fn forward<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    layout: &ParamLayout,
    params: &[T],
    batch: &Batch<T>,
    supervision: Supervision,
    mut rng: Option<&mut R>,
) -> Result<Forward<T>> {
    if params.len() != layout.total {
        return Err(Error::Dimension(format!("expected {} parameters, got {}", layout.total, params.len())));
    }
    if batch.inputs.len() != batch.steps * batch.size * INPUT_SIZE || batch.labels.len() != batch.size {
        return Err(Error::Dimension("malformed batch".into()));
    }
    if batch.labels.iter().any(|&l| l >= OUTPUT_SIZE) {
        return Err(Error::Dimension("label out of range".into()));
    }
    let d = Dims {
        steps: batch.steps,
        batch: batch.size,
        hidden: spec.hidden_size,
        gates: spec.cell.gates() * spec.hidden_size,
    };
    let p = spec.dropout_p;
    let mut layers: Vec<LayerCache<T>> = Vec::with_capacity(spec.num_layers);
    for l in 0..spec.num_layers {
        let (x, mask) = match layers.last() {
            None => (batch.inputs.clone(), None),
            Some(prev) => {
                let mut x = prev.h.clone();
                let mask = match rng.as_deref_mut() {
                    Some(r) if spec.dropout_between_layers && p > 0.0 => {
                        let m = dropout_mask::<T, R>(x.len(), p, r);
                        x.iter_mut().zip(&m).for_each(|(v, k)| *v *= *k);
                        Some(m)
                    }
                    _ => None,
                };
                (x, mask)
            }
        };
        layers.push(layer_forward(spec.cell, &d, x, mask, layer_weights(layout, l, params)));
    }

    let (b, h, k) = (d.batch, d.hidden, spec.linear_size);
    let top = &layers.last().expect("at least one layer").h;
    let first = supervision.first_step(d.steps);
    let rows = (d.steps - first) * b;
    let mut h_drop = top[first * b * h..].to_vec();
    let mask = match rng {
        Some(r) if p > 0.0 => {
            let m = dropout_mask::<T, R>(h_drop.len(), p, r);
            h_drop.iter_mut().zip(&m).for_each(|(v, k)| *v *= *k);
            Some(m)
        }
        _ => None,
    };
    let mut z1 = vec![T::zero(); rows * k];
    T::gemm(rows, h, k, &h_drop, false, layout.slice(params, layout.tensors.len() - 4), true, T::zero(), &mut z1);
    add_bias_rows(&mut z1, layout.slice(params, layout.tensors.len() - 3));
    let a1: Vec<T> = z1.iter().map(|&v| v.max(T::zero())).collect();
    let mut logits = vec![T::zero(); rows * OUTPUT_SIZE];
    T::gemm(rows, k, OUTPUT_SIZE, &a1, false, layout.slice(params, layout.tensors.len() - 2), true, T::zero(), &mut logits);
    add_bias_rows(&mut logits, layout.slice(params, layout.tensors.len() - 1));

    let mut stats = BatchStats { count: b, ..Default::default() };
    let mut loss_sum = 0.0;
    let mut probs = vec![T::zero(); rows * OUTPUT_SIZE];
    for r in 0..rows {
        let row = &logits[r * OUTPUT_SIZE..(r + 1) * OUTPUT_SIZE];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        for c in 0..OUTPUT_SIZE {
            probs[r * OUTPUT_SIZE + c] = exps[c] / sum;
        }
        let label = batch.labels[r % b];
        let log_p = (row[label] - max - sum.ln()).to_f64().unwrap_or(f64::NAN);
        loss_sum -= log_p;
        if r < rows - b {
            continue;
        }
        stats.loss_sum -= log_p;
        let argmax = (0..OUTPUT_SIZE).fold(0, |best, c| if row[c] > row[best] { c } else { best });
        stats.correct += usize::from(argmax == label);
    }
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    let loss = loss_sum / rows as f64;
    Ok(Forward { layers, head: HeadCache { h_drop, mask, z1, a1, probs }, stats, loss })
}

/// Loss statistics without gradients (dropout off).
pub fn evaluate_batch<T: Real>(spec: &ModelSpec, layout: &ParamLayout, params: &[T], batch: &Batch<T>) -> Result<BatchStats> {
    Ok(forward::<T, rand_chacha::ChaCha8Rng>(spec, layout, params, batch, Supervision::Final, None)?.stats)
}

/// Mean cross-entropy over the supervised symbols, dropout off.
pub fn supervised_loss<T: Real>(
    spec: &ModelSpec,
    layout: &ParamLayout,
    params: &[T],
    batch: &Batch<T>,
    supervision: Supervision,
) -> Result<f64> {
    Ok(forward::<T, rand_chacha::ChaCha8Rng>(spec, layout, params, batch, supervision, None)?.loss)
}

/// Mean cross-entropy over the supervised symbols of the batch and its
/// gradient, written into `grad` (overwritten). Dropout is active when `rng`
/// is given. The returned statistics cover the final symbol only.
pub fn loss_and_grad<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    layout: &ParamLayout,
    params: &[T],
    batch: &Batch<T>,
    supervision: Supervision,
    rng: Option<&mut R>,
    grad: &mut [T],
) -> Result<BatchStats> {
    if grad.len() != layout.total {
        return Err(Error::Dimension("gradient buffer has the wrong length".into()));
    }
    let fwd = forward(spec, layout, params, batch, supervision, rng)?;
    grad.iter_mut().for_each(|g| *g = T::zero());
    let d = Dims {
        steps: batch.steps,
        batch: batch.size,
        hidden: spec.hidden_size,
        gates: spec.cell.gates() * spec.hidden_size,
    };
    let (b, h, k) = (d.batch, d.hidden, spec.linear_size);
    let n = layout.tensors.len();
    let first = supervision.first_step(d.steps);
    let rows = (d.steps - first) * b;
    let inv_rows = T::one() / T::from_usize(rows).unwrap();

    let mut dlogits = fwd.head.probs.clone();
    for r in 0..rows {
        dlogits[r * OUTPUT_SIZE + batch.labels[r % b]] -= T::one();
    }
    dlogits.iter_mut().for_each(|v| *v *= inv_rows);

    let out_w = layout.slice(params, n - 2);
    let fc_w = layout.slice(params, n - 4);
    {
        let r = layout.tensors[n - 2].range();
        T::gemm(OUTPUT_SIZE, rows, k, &dlogits, true, &fwd.head.a1, false, T::zero(), &mut grad[r]);
        col_sums_into(&dlogits, OUTPUT_SIZE, &mut grad[layout.tensors[n - 1].range()]);
    }
    let mut dz1 = vec![T::zero(); rows * k];
    T::gemm(rows, OUTPUT_SIZE, k, &dlogits, false, out_w, false, T::zero(), &mut dz1);
    dz1.iter_mut().zip(&fwd.head.z1).for_each(|(g, &z)| {
        if z <= T::zero() {
            *g = T::zero();
        }
    });
    T::gemm(k, rows, h, &dz1, true, &fwd.head.h_drop, false, T::zero(), &mut grad[layout.tensors[n - 4].range()]);
    col_sums_into(&dz1, k, &mut grad[layout.tensors[n - 3].range()]);
    let mut dh_head = vec![T::zero(); rows * h];
    T::gemm(rows, k, h, &dz1, false, fc_w, false, T::zero(), &mut dh_head);
    if let Some(mask) = &fwd.head.mask {
        dh_head.iter_mut().zip(mask).for_each(|(g, m)| *g *= *m);
    }

    let tb = d.steps * b;
    let mut dh_out = vec![T::zero(); tb * h];
    dh_out[first * b * h..].copy_from_slice(&dh_head);
    for l in (0..spec.num_layers).rev() {
        let cache = &fwd.layers[l];
        let w = layer_weights(layout, l, params);
        let dx = layer_backward(spec.cell, &d, cache, w, &dh_out, layer_grads(layout, l, grad), l > 0);
        if let Some(mut dx) = dx {
            if let Some(mask) = &cache.in_mask {
                dx.iter_mut().zip(mask).for_each(|(g, m)| *g *= *m);
            }
            dh_out = dx;
        }
    }
    Ok(fwd.stats)
}
