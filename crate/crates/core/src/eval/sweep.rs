use serde::{Deserialize, Serialize};

use super::{compute_trajectories, evaluate_trajectories, EvalRecord};
use crate::error::Result;
use crate::policies::PolicyConfig;
use crate::rnn::{ModelWeights, SoftmaxTrajectory};
use crate::signal_gen::Dataset;

/// Reference length the default durations are expressed against.
pub const REFERENCE_LENGTH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Durations in symbols.
    pub durations: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            durations: (1..=9).map(|k| 100 * k).collect(),
            thresholds: vec![0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
            deltas: vec![0.1, 0.2, 0.3, 0.4],
        }
    }
}

impl SweepGrid {
    /// Default grid with durations rescaled from 1024 symbols to `signal_length`,
    /// keeping the same fractions of the signal.
    pub fn default_for_length(signal_length: usize) -> Self {
        let mut g = Self::default();
        g.durations = g
            .durations
            .iter()
            .map(|&d| ((d * signal_length) as f64 / REFERENCE_LENGTH as f64).round().max(1.0) as usize)
            .collect();
        g
    }

    /// Every configuration: SUB over durations, THR over thresholds,
    /// SAT over durations x thresholds, DEL over durations x deltas.
    pub fn configs(&self) -> Vec<PolicyConfig> {
        let mut out = Vec::new();
        out.extend(self.durations.iter().map(|&duration| PolicyConfig::Sub { duration }));
        out.extend(self.thresholds.iter().map(|&threshold| PolicyConfig::Thr { threshold }));
        for &duration in &self.durations {
            for &threshold in &self.thresholds {
                out.push(PolicyConfig::Sat { threshold, duration });
            }
        }
        for &duration in &self.durations {
            for &delta in &self.deltas {
                out.push(PolicyConfig::Del { delta, duration });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// NON (full-length) performance.
    pub baseline: EvalRecord,
    /// One record per grid configuration, in [`SweepGrid::configs`] order.
    pub records: Vec<EvalRecord>,
}

impl SweepReport {
    /// Baseline followed by the grid records.
    pub fn all_records(&self) -> Vec<EvalRecord> {
        std::iter::once(self.baseline.clone()).chain(self.records.iter().cloned()).collect()
    }
}

/// Sweeps the grid over precomputed trajectories.
pub fn sweep_trajectories(
    model: &str,
    trajectories: &[SoftmaxTrajectory],
    test_set: &Dataset,
    grid: &SweepGrid,
) -> Result<SweepReport> {
    let (baseline, _) = evaluate_trajectories(model, trajectories, test_set, &PolicyConfig::Non)?;
    let records = grid
        .configs()
        .iter()
        .map(|cfg| Ok(evaluate_trajectories(model, trajectories, test_set, cfg)?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { baseline, records })
}

/// Computes each example's trajectory once and sweeps the grid over it.
pub fn sweep(model: &str, weights: &ModelWeights, test_set: &Dataset, grid: &SweepGrid) -> Result<SweepReport> {
    let trajectories = compute_trajectories(weights, test_set)?;
    sweep_trajectories(model, &trajectories, test_set, grid)
}
