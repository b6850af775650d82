use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{BestRow, BreakdownReport, EvalRecord, SweepGrid};
use crate::error::{Error, Result};
use crate::policies::PolicyConfig;

pub const RECORDS_HEADER: [&str; 6] = ["model", "technique", "params", "pcc", "psp", "n"];

/// One CSV row per record, fixed column order. The signal length is not a
/// column; it is supplied again when reading.
pub fn write_records_csv<W: Write>(records: &[EvalRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.model.clone(),
            r.technique().to_string(),
            r.policy.params_string(),
            r.avg_pcc.to_string(),
            r.avg_psp.to_string(),
            r.n_examples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R, signal_length: usize) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(RECORDS_HEADER) {
        return Err(Error::Format("unexpected records CSV header".into()));
    }
    rdr.records()
        .map(|row| {
            let row = row?;
            let num = |i: usize| row[i].parse::<f64>().map_err(|e| Error::Format(e.to_string()));
            let policy: PolicyConfig =
                if row[2].is_empty() { row[1].parse()? } else { format!("{}:{}", &row[1], &row[2]).parse()? };
            Ok(EvalRecord {
                model: row[0].to_string(),
                policy,
                avg_pcc: num(3)?,
                avg_psp: num(4)?,
                n_examples: row[5].parse().map_err(|e: std::num::ParseIntError| Error::Format(e.to_string()))?,
                signal_length,
            })
        })
        .collect()
}

pub fn write_breakdown_csv<W: Write>(reports: &[BreakdownReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "policy", "axis", "key", "pcc", "psp", "n"])?;
    for r in reports {
        for c in &r.cells {
            w.write_record([
                r.model.clone(),
                r.policy.to_string(),
                format!("{:?}", r.axis).to_lowercase(),
                c.key.clone(),
                c.pcc.to_string(),
                c.psp.to_string(),
                c.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON summary of one model's sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub model: String,
    pub baseline_pcc: f64,
    pub tolerance: f64,
    /// Best row per technique (`null` when nothing qualifies).
    pub best: BTreeMap<String, Option<BestRow>>,
    /// Table-style rows for the qualifying techniques.
    pub table: Vec<String>,
    pub grid: SweepGrid,
    pub dataset_digest: String,
    pub weights_digest: String,
    pub breakdowns: Vec<BreakdownReport>,
    /// Run configuration that produced this report.
    pub config: serde_json::Value,
}

impl ReportSummary {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn missing_techniques(&self) -> Vec<String> {
        self.best.iter().filter(|(_, b)| b.is_none()).map(|(k, _)| k.clone()).collect()
    }
}
