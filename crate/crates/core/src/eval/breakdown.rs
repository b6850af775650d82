use serde::{Deserialize, Serialize};

use super::{aggregate, evaluate, ExampleLog};
use crate::error::Result;
use crate::policies::PolicyConfig;
use crate::rnn::ModelWeights;
use crate::signal_gen::{Dataset, ModulationClass, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Class,
    Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    /// Class name or SNR in dB.
    pub key: String,
    pub n: usize,
    pub pcc: f64,
    pub psp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub model: String,
    pub policy: PolicyConfig,
    pub axis: Axis,
    pub cells: Vec<BreakdownCell>,
}

impl BreakdownReport {
    pub fn cell(&self, key: &str) -> Option<&BreakdownCell> {
        self.cells.iter().find(|c| c.key == key)
    }

    /// Count-weighted means over the cells.
    pub fn weighted_means(&self) -> (f64, f64) {
        let n: usize = self.cells.iter().map(|c| c.n).sum();
        let pcc: f64 = self.cells.iter().map(|c| c.pcc * c.n as f64).sum();
        let psp: f64 = self.cells.iter().map(|c| c.psp * c.n as f64).sum();
        (pcc / n as f64, psp / n as f64)
    }
}

/// Partitions per-example logs along `axis`. The SNR axis has one cell per
/// value in `snrs`; empty cells report zero counts.
pub fn breakdown_logs(model: &str, policy: PolicyConfig, logs: &[ExampleLog], axis: Axis, snrs: &[i32]) -> BreakdownReport {
    let keys: Vec<(String, Box<dyn Fn(&ExampleLog) -> bool>)> = match axis {
        Axis::Class => (0..NUM_CLASSES)
            .map(|c| {
                let name = ModulationClass::from_index(c).expect("class index").name().to_string();
                (name, Box::new(move |l: &ExampleLog| l.label == c) as Box<dyn Fn(&ExampleLog) -> bool>)
            })
            .collect(),
        Axis::Snr => snrs
            .iter()
            .map(|&s| (s.to_string(), Box::new(move |l: &ExampleLog| l.snr_db == s) as Box<dyn Fn(&ExampleLog) -> bool>))
            .collect(),
    };
    let cells = keys
        .into_iter()
        .map(|(key, keep)| {
            let part: Vec<ExampleLog> = logs.iter().copied().filter(|l| keep(l)).collect();
            let (pcc, psp) = if part.is_empty() { (0.0, 0.0) } else { aggregate(&part) };
            BreakdownCell { key, n: part.len(), pcc, psp }
        })
        .collect();
    BreakdownReport { model: model.to_string(), policy, axis, cells }
}

pub fn breakdown(
    model: &str,
    weights: &ModelWeights,
    test_set: &Dataset,
    config: &PolicyConfig,
    axis: Axis,
) -> Result<BreakdownReport> {
    let (_, logs) = evaluate(model, weights, test_set, config)?;
    Ok(breakdown_logs(model, *config, &logs, axis, &test_set.header.snrs))
}
