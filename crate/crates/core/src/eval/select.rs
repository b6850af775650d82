use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalRecord;
use crate::policies::{PolicyConfig, Technique};

/// Guards the PCC comparison against rounding in `baseline - tolerance`.
const PCC_EPS: f64 = 1e-12;

/// Lowest-PSP configuration of one technique that keeps baseline accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub model: String,
    pub technique: Technique,
    pub policy: PolicyConfig,
    pub pcc: f64,
    pub psp: f64,
    /// Duration as a fraction of the signal length.
    pub duration: Option<f64>,
    /// Threshold, or delta-threshold for DEL.
    pub threshold: Option<f64>,
}

impl BestRow {
    pub fn from_record(r: &EvalRecord) -> Self {
        Self {
            model: r.model.clone(),
            technique: r.technique(),
            policy: r.policy,
            pcc: r.avg_pcc,
            psp: r.avg_psp,
            duration: r.duration_fraction(),
            threshold: r.policy.threshold(),
        }
    }
}

impl fmt::Display for BestRow {
    /// `model technique pcc psp duration threshold`, two decimals, `-` when absent.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt2 = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let thr = self.threshold.map_or_else(|| "-".to_string(), |x| x.to_string());
        write!(f, "{} {} {:.2} {:.2} {} {}", self.model, self.technique, self.pcc, self.psp, opt2(self.duration), thr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSelection {
    pub technique: Technique,
    /// `None` when no configuration qualifies.
    pub best: Option<BestRow>,
}

fn tie_break(a: &EvalRecord, b: &EvalRecord) -> Ordering {
    a.avg_psp
        .total_cmp(&b.avg_psp)
        .then_with(|| a.policy.duration().unwrap_or(0).cmp(&b.policy.duration().unwrap_or(0)))
        .then_with(|| a.policy.threshold().unwrap_or(0.0).total_cmp(&b.policy.threshold().unwrap_or(0.0)))
}

/// For each early-stopping technique, the minimum-PSP record among those with
/// `pcc >= baseline_pcc - tolerance`; ties go to the smaller duration, then
/// the smaller threshold.
pub fn select_best(records: &[EvalRecord], baseline_pcc: f64, tolerance: f64) -> Vec<BestSelection> {
    Technique::EARLY
        .iter()
        .map(|&technique| {
            let best = records
                .iter()
                .filter(|r| r.technique() == technique && r.avg_pcc >= baseline_pcc - tolerance - PCC_EPS)
                .min_by(|a, b| tie_break(a, b))
                .map(BestRow::from_record);
            BestSelection { technique, best }
        })
        .collect()
}
