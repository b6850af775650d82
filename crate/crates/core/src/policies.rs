//! Early-stopping ("just enough") decision policies.
//!
//! Each policy is an incremental state machine fed one softmax row per
//! processed symbol. State is a fixed handful of scalars, so the per-symbol
//! cost does not depend on how many symbols have been seen.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rnn::{forward_step, HiddenState, ModelWeights};

/// Allowed deviation of a softmax row sum from one.
pub const SOFTMAX_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technique {
    Sub,
    Thr,
    Sat,
    Del,
    Non,
}

impl Technique {
    pub const EARLY: [Technique; 4] = [Technique::Sub, Technique::Thr, Technique::Sat, Technique::Del];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Sub => "SUB",
            Technique::Thr => "THR",
            Technique::Sat => "SAT",
            Technique::Del => "DEL",
            Technique::Non => "NON",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUB" => Ok(Technique::Sub),
            "THR" => Ok(Technique::Thr),
            "SAT" => Ok(Technique::Sat),
            "DEL" => Ok(Technique::Del),
            "NON" => Ok(Technique::Non),
            other => Err(Error::Config(format!("unknown technique `{other}`"))),
        }
    }
}

/// A stopping technique with its parameters. Durations are in symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyConfig {
    /// Stop after a fixed number of symbols.
    Sub { duration: usize },
    /// Stop when the top softmax value exceeds `threshold`.
    Thr { threshold: f64 },
    /// Stop once the same class has stayed above `threshold` for `duration` symbols.
    Sat { threshold: f64, duration: usize },
    /// Stop once the tracked class probability has stayed within `delta` of
    /// both the window start and the previous symbol for `duration` symbols.
    Del { delta: f64, duration: usize },
    /// Never stop early.
    Non,
}

impl PolicyConfig {
    pub fn technique(&self) -> Technique {
        match self {
            PolicyConfig::Sub { .. } => Technique::Sub,
            PolicyConfig::Thr { .. } => Technique::Thr,
            PolicyConfig::Sat { .. } => Technique::Sat,
            PolicyConfig::Del { .. } => Technique::Del,
            PolicyConfig::Non => Technique::Non,
        }
    }

    pub fn duration(&self) -> Option<usize> {
        match *self {
            PolicyConfig::Sub { duration } | PolicyConfig::Sat { duration, .. } | PolicyConfig::Del { duration, .. } => {
                Some(duration)
            }
            _ => None,
        }
    }

    /// Threshold, or delta-threshold for DEL.
    pub fn threshold(&self) -> Option<f64> {
        match *self {
            PolicyConfig::Thr { threshold } | PolicyConfig::Sat { threshold, .. } => Some(threshold),
            PolicyConfig::Del { delta, .. } => Some(delta),
            _ => None,
        }
    }

    /// Parameter part of the text form (`t=0.9,d=400`), empty for NON.
    pub fn params_string(&self) -> String {
        match *self {
            PolicyConfig::Sub { duration } => format!("d={duration}"),
            PolicyConfig::Thr { threshold } => format!("t={threshold}"),
            PolicyConfig::Sat { threshold, duration } => format!("t={threshold},d={duration}"),
            PolicyConfig::Del { delta, duration } => format!("dt={delta},d={duration}"),
            PolicyConfig::Non => String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} outside (0, 1)")))
            }
        };
        let dur = |d: usize| {
            if d >= 1 {
                Ok(())
            } else {
                Err(Error::Config("duration must be at least one symbol".into()))
            }
        };
        match *self {
            PolicyConfig::Sub { duration } => dur(duration),
            PolicyConfig::Thr { threshold } => prob("threshold", threshold),
            PolicyConfig::Sat { threshold, duration } => prob("threshold", threshold).and(dur(duration)),
            PolicyConfig::Del { delta, duration } => prob("delta-threshold", delta).and(dur(duration)),
            PolicyConfig::Non => Ok(()),
        }
    }
}

impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyConfig::Non => f.write_str("NON"),
            other => write!(f, "{}:{}", other.technique(), other.params_string()),
        }
    }
}

impl FromStr for PolicyConfig {
    type Err = Error;

    /// Parses `SUB:d=200`, `THR:t=0.9`, `SAT:t=0.9,d=400`, `DEL:dt=0.1,d=300` or `NON`.
    fn from_str(s: &str) -> Result<Self> {
        let (tech, params) = s.split_once(':').unwrap_or((s, ""));
        let tech: Technique = tech.parse()?;
        let mut d = None;
        let mut t = None;
        let mut dt = None;
        for kv in params.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed policy parameter `{kv}`")))?;
            let bad = |_| Error::Config(format!("bad value in `{kv}`"));
            match k.trim() {
                "d" => d = Some(v.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "t" => t = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "dt" => dt = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                other => return Err(Error::Config(format!("unknown policy parameter `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Config(format!("{tech} requires `{what}`"));
        let extra = |ok: bool| if ok { Ok(()) } else { Err(Error::Config(format!("unexpected parameter for {tech}"))) };
        let cfg = match tech {
            Technique::Sub => {
                extra(t.is_none() && dt.is_none())?;
                PolicyConfig::Sub { duration: d.ok_or_else(|| missing("d"))? }
            }
            Technique::Thr => {
                extra(d.is_none() && dt.is_none())?;
                PolicyConfig::Thr { threshold: t.ok_or_else(|| missing("t"))? }
            }
            Technique::Sat => {
                extra(dt.is_none())?;
                PolicyConfig::Sat { threshold: t.ok_or_else(|| missing("t"))?, duration: d.ok_or_else(|| missing("d"))? }
            }
            Technique::Del => {
                extra(t.is_none())?;
                PolicyConfig::Del { delta: dt.ok_or_else(|| missing("dt"))?, duration: d.ok_or_else(|| missing("d"))? }
            }
            Technique::Non => {
                extra(d.is_none() && t.is_none() && dt.is_none())?;
                PolicyConfig::Non
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Running state of one policy on one stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyState {
    pub symbols_seen: usize,
    pub tracked_class: Option<usize>,
    pub consecutive_count: usize,
    /// Tracked-class probability at the start of the current DEL window.
    pub anchor_value: f64,
    /// Tracked-class probability at the previous symbol (DEL).
    pub previous_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Decide(usize),
}

/// Outcome of running a policy over a signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub decided_class: usize,
    /// 1-based index of the symbol at which the decision was taken.
    pub stop_index: usize,
    /// False when the signal ended before the policy fired.
    pub triggered: bool,
    /// Portion of the signal processed.
    pub psp: f64,
}

pub fn policy_init(config: &PolicyConfig) -> Result<PolicyState> {
    config.validate()?;
    Ok(PolicyState::default())
}

/// Index and value of the largest entry (first one on ties).
pub fn argmax(row: &[f32]) -> (usize, f64) {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if (p as f64) > best.1 { (i, p as f64) } else { best })
}

fn check_row(row: &[f32]) -> Result<()> {
    let sum: f64 = row.iter().map(|&p| p as f64).sum();
    if row.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > SOFTMAX_SUM_TOLERANCE {
        return Err(Error::MalformedSoftmax { sum });
    }
    Ok(())
}

/// Feeds one softmax row to the policy.
pub fn policy_step(config: &PolicyConfig, state: &mut PolicyState, row: &[f32]) -> Result<StepOutcome> {
    check_row(row)?;
    state.symbols_seen += 1;
    let (top, p_top) = argmax(row);
    let outcome = match *config {
        PolicyConfig::Non => StepOutcome::Continue,
        PolicyConfig::Sub { duration } => {
            if state.symbols_seen >= duration {
                StepOutcome::Decide(top)
            } else {
                StepOutcome::Continue
            }
        }
        PolicyConfig::Thr { threshold } => {
            if p_top > threshold {
                StepOutcome::Decide(top)
            } else {
                StepOutcome::Continue
            }
        }
        PolicyConfig::Sat { threshold, duration } => {
            if p_top <= threshold {
                state.tracked_class = None;
                state.consecutive_count = 0;
            } else if state.tracked_class == Some(top) {
                state.consecutive_count += 1;
            } else {
                state.tracked_class = Some(top);
                state.consecutive_count = 1;
            }
            if state.consecutive_count >= duration {
                StepOutcome::Decide(top)
            } else {
                StepOutcome::Continue
            }
        }
        PolicyConfig::Del { delta, duration } => {
            let restart = match state.tracked_class {
                Some(c) if c == top => {
                    let p = row[c] as f64;
                    (p - state.anchor_value).abs() > delta || (p - state.previous_value).abs() > delta
                }
                _ => true,
            };
            if restart {
                state.tracked_class = Some(top);
                state.anchor_value = p_top;
                state.consecutive_count = 1;
            } else {
                state.consecutive_count += 1;
            }
            state.previous_value = p_top;
            if state.consecutive_count >= duration {
                StepOutcome::Decide(top)
            } else {
                StepOutcome::Continue
            }
        }
    };
    Ok(outcome)
}

fn decision(class: usize, stop_index: usize, triggered: bool, signal_length: usize) -> Decision {
    Decision { decided_class: class, stop_index, triggered, psp: stop_index as f64 / signal_length as f64 }
}

/// Runs a policy over a complete trajectory, falling back to the final
/// argmax when it never fires.
pub fn run_policy(config: &PolicyConfig, rows: &[[f32; 5]]) -> Result<Decision> {
    let mut state = policy_init(config)?;
    let last = rows.last().ok_or(Error::Empty("run_policy trajectory"))?;
    for (t, row) in rows.iter().enumerate() {
        if let StepOutcome::Decide(c) = policy_step(config, &mut state, row)? {
            return Ok(decision(c, t + 1, true, rows.len()));
        }
    }
    Ok(decision(argmax(last).0, rows.len(), false, rows.len()))
}

/// Interleaves inference and the policy, pulling symbols only until the
/// policy fires or `signal_length` symbols have been consumed.
pub fn stream_classify<I>(
    config: &PolicyConfig,
    weights: &ModelWeights,
    symbols: I,
    signal_length: usize,
) -> Result<Decision>
where
    I: IntoIterator<Item = Complex32>,
{
    if signal_length == 0 {
        return Err(Error::Config("signal_length must be positive".into()));
    }
    let mut policy = policy_init(config)?;
    let mut hidden = HiddenState::new(weights);
    let mut source = symbols.into_iter();
    let mut last = None;
    let mut consumed = 0;
    while consumed < signal_length {
        let Some(symbol) = source.next() else { break };
        consumed += 1;
        let row = forward_step(weights, symbol, &mut hidden)?;
        if let StepOutcome::Decide(c) = policy_step(config, &mut policy, &row)? {
            return Ok(decision(c, consumed, true, signal_length));
        }
        last = Some(row);
    }
    let last = last.ok_or(Error::Empty("stream_classify source"))?;
    Ok(decision(argmax(&last).0, consumed, false, signal_length))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rows whose top class is 0 with the given probabilities.
    fn rows_with_max(values: &[f64]) -> Vec<[f32; 5]> {
        values
            .iter()
            .map(|&p| {
                let rest = ((1.0 - p) / 4.0) as f32;
                [p as f32, rest, rest, rest, rest]
            })
            .collect()
    }

    #[test]
    fn init_states() {
        let s = policy_init(&PolicyConfig::Sat { threshold: 0.9, duration: 100 }).unwrap();
        assert_eq!(s.consecutive_count, 0);
        let s = policy_init(&PolicyConfig::Del { delta: 0.1, duration: 100 }).unwrap();
        assert_eq!(s.tracked_class, None);
        assert!(matches!(policy_init(&PolicyConfig::Thr { threshold: 1.5 }), Err(Error::Config(_))));
        assert!(policy_init(&PolicyConfig::Sub { duration: 0 }).is_err());
        assert!(policy_init(&PolicyConfig::Del { delta: 0.0, duration: 3 }).is_err());
    }

    #[test]
    fn thr_first_strict_exceedance() {
        let rows = rows_with_max(&[0.4, 0.7, 0.95, 0.99]);
        let d = run_policy(&PolicyConfig::Thr { threshold: 0.9 }, &rows).unwrap();
        assert_eq!((d.stop_index, d.triggered, d.decided_class), (3, true, 0));
        // equality does not exceed
        let rows = rows_with_max(&[0.5, 0.5]);
        let d = run_policy(&PolicyConfig::Thr { threshold: 0.5 }, &rows).unwrap();
        assert!(!d.triggered);
    }

    #[test]
    fn sat_run_resets() {
        let rows = rows_with_max(&[0.85, 0.9, 0.7, 0.85, 0.9, 0.95]);
        let d = run_policy(&PolicyConfig::Sat { threshold: 0.8, duration: 3 }, &rows).unwrap();
        assert_eq!(d.stop_index, 6);
    }

    #[test]
    fn sat_resets_on_class_change() {
        let mut rows = rows_with_max(&[0.9, 0.9, 0.9, 0.9]);
        rows[1] = [0.025, 0.9, 0.025, 0.025, 0.025];
        let d = run_policy(&PolicyConfig::Sat { threshold: 0.8, duration: 2 }, &rows).unwrap();
        assert_eq!((d.stop_index, d.decided_class), (4, 0));
    }

    #[test]
    fn del_consecutive_change_resets() {
        let rows = rows_with_max(&[0.90, 0.97, 0.80, 0.82, 0.85, 0.83]);
        let d = run_policy(&PolicyConfig::Del { delta: 0.1, duration: 3 }, &rows).unwrap();
        assert_eq!((d.stop_index, d.decided_class), (5, 0));
    }

    #[test]
    fn del_window_band_around_anchor() {
        // anchor 0.9, delta 0.1: values inside [0.8, 1.0] keep the window alive
        let mut values = vec![0.9];
        values.extend([0.95, 0.99, 0.93, 0.88, 0.82, 0.81]);
        let cfg = PolicyConfig::Del { delta: 0.1, duration: values.len() };
        assert_eq!(run_policy(&cfg, &rows_with_max(&values)).unwrap().stop_index, values.len());
        // leaving the band restarts the window
        values[4] = 0.78;
        let d = run_policy(&cfg, &rows_with_max(&values)).unwrap();
        assert!(!d.triggered);
    }

    #[test]
    fn sub_full_length_is_baseline() {
        let rows = rows_with_max(&[0.3, 0.5, 0.6, 0.4]);
        let base = run_policy(&PolicyConfig::Non, &rows).unwrap();
        let sub = run_policy(&PolicyConfig::Sub { duration: 4 }, &rows).unwrap();
        assert_eq!((sub.decided_class, sub.psp), (base.decided_class, 1.0));
        assert_eq!(base.psp, 1.0);
        assert!(!base.triggered);
    }

    #[test]
    fn thr_fallback_uses_final_argmax() {
        let mut rows = rows_with_max(&[0.3, 0.5]);
        rows.push([0.1, 0.1, 0.6, 0.1, 0.1]);
        let d = run_policy(&PolicyConfig::Thr { threshold: 0.999999 }, &rows).unwrap();
        assert_eq!((d.triggered, d.psp, d.decided_class, d.stop_index), (false, 1.0, 2, 3));
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut s = PolicyState::default();
        let err = policy_step(&PolicyConfig::Non, &mut s, &[0.5, 0.1, 0.1, 0.1, 0.1]).unwrap_err();
        assert!(matches!(err, Error::MalformedSoftmax { .. }));
        assert!(run_policy(&PolicyConfig::Non, &[]).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        for s in ["SUB:d=200", "THR:t=0.9", "SAT:t=0.9,d=400", "DEL:dt=0.1,d=300", "NON"] {
            let cfg: PolicyConfig = s.parse().unwrap();
            assert_eq!(cfg.to_string(), s);
        }
        assert_eq!("sat:d=4,t=0.8".parse::<PolicyConfig>().unwrap(), PolicyConfig::Sat { threshold: 0.8, duration: 4 });
        for bad in ["SUB", "THR:t=1.5", "SAT:t=0.9", "DEL:t=0.1,d=3", "NON:d=3", "XYZ:d=1", "SUB:d=x"] {
            assert!(bad.parse::<PolicyConfig>().is_err(), "{bad}");
        }
    }
}
