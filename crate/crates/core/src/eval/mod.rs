//! PCC/PSP evaluation, parameter sweeps, best-configuration selection and
//! per-class / per-SNR breakdowns.

mod breakdown;
mod report;
mod select;
mod sweep;

pub use breakdown::{breakdown, breakdown_logs, Axis, BreakdownCell, BreakdownReport};
pub use report::{read_records_csv, write_breakdown_csv, write_records_csv, ReportSummary, RECORDS_HEADER};
pub use select::{select_best, BestRow, BestSelection};
pub use sweep::{sweep, sweep_trajectories, SweepGrid, SweepReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::{run_policy, stream_classify, Decision, PolicyConfig, Technique};
use crate::rnn::{forward_trajectory, ModelWeights, SoftmaxTrajectory};
use crate::signal_gen::{Dataset, SignalExample};

/// Outcome for one test example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleLog {
    pub label: usize,
    pub snr_db: i32,
    pub signal_length: usize,
    pub decision: Decision,
}

impl ExampleLog {
    pub fn correct(&self) -> bool {
        self.decision.decided_class == self.label
    }
}

/// Average PCC and PSP of one (model, policy) pair over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub policy: PolicyConfig,
    pub avg_pcc: f64,
    pub avg_psp: f64,
    pub n_examples: usize,
    pub signal_length: usize,
}

impl EvalRecord {
    pub fn technique(&self) -> Technique {
        self.policy.technique()
    }

    /// Duration as a fraction of the signal length.
    pub fn duration_fraction(&self) -> Option<f64> {
        self.policy.duration().map(|d| d as f64 / self.signal_length as f64)
    }
}

/// Fraction correct and mean PSP. PSP is accumulated as integer symbol
/// counts, so SUB with a fixed duration averages to exactly `duration / length`.
pub fn aggregate(logs: &[ExampleLog]) -> (f64, f64) {
    let correct = logs.iter().filter(|l| l.correct()).count();
    let processed: usize = logs.iter().map(|l| l.decision.stop_index).sum();
    let total: usize = logs.iter().map(|l| l.signal_length).sum();
    (correct as f64 / logs.len() as f64, processed as f64 / total as f64)
}

fn record(model: &str, policy: PolicyConfig, logs: &[ExampleLog], signal_length: usize) -> Result<EvalRecord> {
    if logs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let (avg_pcc, avg_psp) = aggregate(logs);
    Ok(EvalRecord { model: model.to_string(), policy, avg_pcc, avg_psp, n_examples: logs.len(), signal_length })
}

fn log_for(ex: &SignalExample, decision: Decision) -> ExampleLog {
    ExampleLog { label: ex.label.index(), snr_db: ex.snr_db, signal_length: ex.len(), decision }
}

/// Streams every example through the network with the policy attached,
/// stopping each stream as soon as the policy decides.
pub fn evaluate(
    model: &str,
    weights: &ModelWeights,
    test_set: &Dataset,
    config: &PolicyConfig,
) -> Result<(EvalRecord, Vec<ExampleLog>)> {
    let len = test_set.signal_length();
    let logs = test_set
        .examples
        .par_iter()
        .map(|ex| Ok(log_for(ex, stream_classify(config, weights, ex.symbols.iter().copied(), len)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((record(model, *config, &logs, len)?, logs))
}

/// Full-length softmax trajectories for every example, in dataset order.
pub fn compute_trajectories(weights: &ModelWeights, test_set: &Dataset) -> Result<Vec<SoftmaxTrajectory>> {
    test_set.examples.par_iter().map(|ex| forward_trajectory(weights, ex)).collect()
}

/// Same as [`evaluate`] but replays cached trajectories.
pub fn evaluate_trajectories(
    model: &str,
    trajectories: &[SoftmaxTrajectory],
    test_set: &Dataset,
    config: &PolicyConfig,
) -> Result<(EvalRecord, Vec<ExampleLog>)> {
    if trajectories.len() != test_set.len() {
        return Err(Error::Dimension("one trajectory per test example required".into()));
    }
    let logs = trajectories
        .par_iter()
        .zip(&test_set.examples)
        .map(|(traj, ex)| Ok(log_for(ex, run_policy(config, &traj.rows)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((record(model, *config, &logs, test_set.signal_length())?, logs))
}
