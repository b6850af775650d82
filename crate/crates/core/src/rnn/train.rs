//! Mini-batch training with Adam, gradient-norm clipping and early stopping
//! on validation loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bptt::{evaluate_batch, loss_and_grad, Batch, BatchStats, Supervision};
use super::spec::ModelSpec;
use super::weights::{EpochStats, ModelWeights, Provenance};
use crate::digest::mix64;
use crate::error::{Error, Result};
use crate::signal_gen::{Dataset, SignalExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub supervision: Supervision,
    /// Train on random windows of this many symbols instead of whole
    /// signals; validation always uses whole signals.
    #[serde(default)]
    pub window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            patience: 5,
            seed: 0,
            supervision: Supervision::Final,
            window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let lr_t = (cfg.learning_rate * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t))) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, cfg.epsilon as f32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

fn clip(grad: &mut [f32], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

fn make_batch(examples: &[&SignalExample]) -> Result<Batch<f32>> {
    let seqs: Vec<_> = examples.iter().map(|e| e.symbols.as_slice()).collect();
    let labels: Vec<_> = examples.iter().map(|e| e.label.index()).collect();
    Batch::from_sequences(&seqs, &labels)
}

fn make_window_batch<R: Rng>(examples: &[&SignalExample], window: usize, rng: &mut R) -> Result<Batch<f32>> {
    let seqs: Vec<_> = examples
        .iter()
        .map(|e| {
            let w = window.min(e.symbols.len());
            let start = rng.gen_range(0..=e.symbols.len() - w);
            &e.symbols[start..start + w]
        })
        .collect();
    let labels: Vec<_> = examples.iter().map(|e| e.label.index()).collect();
    Batch::from_sequences(&seqs, &labels)
}

/// Final-symbol loss and accuracy over a whole dataset, dropout off.
pub fn evaluate_dataset(weights: &ModelWeights, data: &Dataset, batch_size: usize) -> Result<BatchStats> {
    let mut total = BatchStats::default();
    let refs: Vec<&SignalExample> = data.examples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk)?;
        total.merge(evaluate_batch(&weights.spec, weights.layout(), &weights.params, &batch)?);
    }
    Ok(total)
}

/// Trains a fresh model. `progress` is called after every epoch.
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<ModelWeights> {
    spec.validate()?;
    let weights = ModelWeights::init(spec, mix64(cfg.seed))?;
    train_from(weights, train_set, valid_set, cfg, progress)
}

/// Continues training from `weights`; epoch numbers and history carry on
/// from its provenance.
pub fn train_from(
    mut weights: ModelWeights,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<ModelWeights> {
    let spec = &weights.spec.clone();
    spec.validate()?;
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Empty("training or validation set"));
    }
    let layout = weights.layout().clone();
    let mut history = std::mem::take(&mut weights.provenance.history);
    let first_epoch = history.len() + 1;
    let stream = |tag: u64| ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ tag ^ ((first_epoch as u64 - 1) << 32)));
    let mut shuffle_rng = stream(0x5348_5546);
    let mut dropout_rng = stream(0x4452_4f50);
    let mut window_rng = stream(0x5749_4e44);
    let mut adam = Adam::new(layout.total);
    let mut grad = vec![0.0f32; layout.total];

    let mut best_params = weights.params.clone();
    // a warm start competes with its own best epoch
    let mut best: Option<EpochStats> = history.get(weights.provenance.best_epoch.wrapping_sub(1)).cloned();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in first_epoch..first_epoch + cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_stats = BatchStats::default();
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<&SignalExample> = idx.iter().map(|&i| &train_set.examples[i]).collect();
            let batch = match cfg.window {
                Some(w) => make_window_batch(&examples, w, &mut window_rng)?,
                None => make_batch(&examples)?,
            };
            let stats = loss_and_grad(spec, &layout, &weights.params, &batch, cfg.supervision, Some(&mut dropout_rng), &mut grad)
                .map_err(|e| match e {
                    Error::NonFinite(what) => {
                        Error::Divergence(format!("{what} not finite at epoch {epoch}, batch {bi}"))
                    }
                    other => other,
                })?;
            let norm = clip(&mut grad, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence(format!("gradient norm not finite at epoch {epoch}, batch {bi}")));
            }
            adam.step(cfg, &mut weights.params, &grad);
            train_stats.merge(stats);
        }
        let valid = evaluate_dataset(&weights, valid_set, 128)?;
        let stats = EpochStats {
            epoch,
            train_loss: train_stats.mean_loss(),
            train_accuracy: train_stats.accuracy(),
            valid_loss: valid.mean_loss(),
            valid_accuracy: valid.accuracy(),
        };
        progress(&stats);
        history.push(stats.clone());
        if best.as_ref().is_none_or(|b| stats.valid_loss < b.valid_loss) {
            best = Some(stats);
            best_params.copy_from_slice(&weights.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    weights.params = best_params;
    let best = best.unwrap_or_default();
    weights.provenance = Provenance {
        train_digest: train_set.digest(),
        valid_digest: valid_set.digest(),
        seed: cfg.seed,
        epochs_run: history.len(),
        best_epoch: best.epoch,
        optimizer: format!("adam(beta1={}, beta2={}, eps={})", cfg.beta1, cfg.beta2, cfg.epsilon),
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        clip_norm: cfg.clip_norm,
        patience: cfg.patience,
        train_loss: best.train_loss,
        train_accuracy: best.train_accuracy,
        valid_loss: best.valid_loss,
        valid_accuracy: best.valid_accuracy,
        history,
    };
    Ok(weights)
}
