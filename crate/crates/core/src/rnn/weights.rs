//! Flat parameter storage with a named-tensor layout derived from a `ModelSpec`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::spec::{CellKind, ModelSpec, OUTPUT_SIZE};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

/// Index of the tensors that make up one recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        let g = spec.cell.gates() * spec.hidden_size;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let info = TensorInfo { name, shape, offset };
            offset += info.len();
            tensors.push(info);
        };
        for l in 0..spec.num_layers {
            push(format!("rnn.{l}.w_ih"), vec![g, spec.layer_input_size(l)]);
            push(format!("rnn.{l}.w_hh"), vec![g, spec.hidden_size]);
            push(format!("rnn.{l}.b_ih"), vec![g]);
            push(format!("rnn.{l}.b_hh"), vec![g]);
        }
        push("fc.w".into(), vec![spec.linear_size, spec.hidden_size]);
        push("fc.b".into(), vec![spec.linear_size]);
        push("out.w".into(), vec![OUTPUT_SIZE, spec.linear_size]);
        push("out.b".into(), vec![OUTPUT_SIZE]);
        ParamLayout { tensors, total: offset }
    }

    pub fn layer(&self, l: usize) -> LayerSlots {
        LayerSlots { w_ih: 4 * l, w_hh: 4 * l + 1, b_ih: 4 * l + 2, b_hh: 4 * l + 3 }
    }

    pub fn num_layers(&self) -> usize {
        (self.tensors.len() - 4) / 4
    }

    pub fn fc_w(&self) -> &TensorInfo {
        &self.tensors[self.tensors.len() - 4]
    }

    pub fn fc_b(&self) -> &TensorInfo {
        &self.tensors[self.tensors.len() - 3]
    }

    pub fn out_w(&self) -> &TensorInfo {
        &self.tensors[self.tensors.len() - 2]
    }

    pub fn out_b(&self) -> &TensorInfo {
        &self.tensors[self.tensors.len() - 1]
    }

    pub fn slice<'a, T>(&self, params: &'a [T], idx: usize) -> &'a [T] {
        &params[self.tensors[idx].range()]
    }

    pub fn find(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Optimizer settings and outcome recorded alongside trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub train_digest: String,
    pub valid_digest: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub patience: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: ModelSpec,
    pub params: Vec<f32>,
    pub provenance: Provenance,
    layout: ParamLayout,
}

impl ModelWeights {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(spec);
        Ok(Self { spec: spec.clone(), params: vec![0.0; layout.total], provenance: Provenance::default(), layout })
    }

    pub fn from_params(spec: &ModelSpec, params: Vec<f32>) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        if params.len() != w.layout.total {
            return Err(crate::Error::Shape(format!(
                "expected {} parameters, got {}",
                w.layout.total,
                params.len()
            )));
        }
        w.params = params;
        Ok(w)
    }

    /// Fresh weights: fan-in uniform input and dense matrices, orthogonal
    /// recurrent blocks, zero biases with LSTM forget bias 1.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = spec.hidden_size;
        let layout = w.layout.clone();
        for l in 0..spec.num_layers {
            let slots = layout.layer(l);
            let fan_in = spec.layer_input_size(l);
            fill_uniform(w.tensor_mut_at(slots.w_ih), 1.0 / (fan_in as f64).sqrt(), &mut rng);
            let whh = w.tensor_mut_at(slots.w_hh);
            for block in whh.chunks_mut(h * h) {
                block.copy_from_slice(&orthogonal(h, &mut rng));
            }
            if spec.cell == CellKind::Lstm {
                w.tensor_mut_at(slots.b_ih)[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
            }
        }
        let n = layout.tensors.len();
        fill_uniform(w.tensor_mut_at(n - 4), 1.0 / (h as f64).sqrt(), &mut rng);
        fill_uniform(w.tensor_mut_at(n - 2), 1.0 / (spec.linear_size as f64).sqrt(), &mut rng);
        Ok(w)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.layout.find(name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let r = self.layout.find(name)?.range();
        Some(&mut self.params[r])
    }

    pub fn tensor_at(&self, idx: usize) -> &[f32] {
        &self.params[self.layout.tensors[idx].range()]
    }

    pub fn tensor_mut_at(&mut self, idx: usize) -> &mut [f32] {
        let r = self.layout.tensors[idx].range();
        &mut self.params[r]
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }
}

fn fill_uniform<R: Rng>(dst: &mut [f32], bound: f64, rng: &mut R) {
    for v in dst {
        *v = rng.gen_range(-bound..bound) as f32;
    }
}

/// Orthogonal `n x n` matrix from Gram-Schmidt on a Gaussian draw.
fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f32> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.into_iter().flatten().map(|x| x as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameter count from the architecture alone.
    fn analytic_count(spec: &ModelSpec) -> usize {
        let g = spec.cell.gates();
        let h = spec.hidden_size;
        let mut total = 0;
        for l in 0..spec.num_layers {
            let inp = if l == 0 { 2 } else { h };
            total += g * h * inp + g * h * h + 2 * g * h;
        }
        total + spec.linear_size * h + spec.linear_size + 5 * spec.linear_size + 5
    }

    #[test]
    fn model3_parameter_count() {
        let spec = ModelSpec::reference(3).unwrap();
        let layout = ParamLayout::new(&spec);
        assert_eq!(layout.total, analytic_count(&spec));
        assert_eq!(layout.total, 65_221);
        let shape_sum: usize = layout.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(shape_sum, layout.total);
    }

    #[test]
    fn every_reference_model_count() {
        for id in 0..5 {
            let spec = ModelSpec::reference(id).unwrap();
            assert_eq!(ParamLayout::new(&spec).total, analytic_count(&spec));
        }
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let spec = ModelSpec::new(CellKind::Gru, 1, 6, 4);
        let w = ModelWeights::init(&spec, 1).unwrap();
        let whh = w.tensor("rnn.0.w_hh").unwrap();
        for block in whh.chunks(36) {
            for i in 0..6 {
                for j in 0..6 {
                    let d: f32 = (0..6).map(|k| block[i * 6 + k] * block[j * 6 + k]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((d - e).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn lstm_forget_bias() {
        let spec = ModelSpec::new(CellKind::Lstm, 2, 3, 4);
        let w = ModelWeights::init(&spec, 2).unwrap();
        let b = w.tensor("rnn.1.b_ih").unwrap();
        assert_eq!(&b[0..3], &[0.0; 3]);
        assert_eq!(&b[3..6], &[1.0; 3]);
        assert_eq!(&b[6..12], &[0.0; 6]);
        assert!(w.tensor("rnn.1.b_hh").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::reference(1).unwrap();
        assert_eq!(ModelWeights::init(&spec, 9).unwrap(), ModelWeights::init(&spec, 9).unwrap());
        assert_ne!(ModelWeights::init(&spec, 9).unwrap(), ModelWeights::init(&spec, 10).unwrap());
    }
}
