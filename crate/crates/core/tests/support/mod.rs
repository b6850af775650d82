//! Shared helpers for integration tests: synthetic softmax trajectories and a
//! brute-force policy oracle that rescans the whole prefix at every symbol.
#![allow(dead_code)]

use jeamc::policies::{Decision, PolicyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Row = [f32; 5];

fn top(row: &Row) -> (usize, f64) {
    let mut best = 0;
    for c in 1..5 {
        if row[c] > row[best] {
            best = c;
        }
    }
    (best, row[best] as f64)
}

/// Does the policy fire after exactly `prefix.len()` symbols? Looks only at
/// the prefix and recomputes everything from its first symbol.
fn fires(config: &PolicyConfig, prefix: &[Row]) -> bool {
    let t = prefix.len();
    let last = &prefix[t - 1];
    match *config {
        PolicyConfig::Non => false,
        PolicyConfig::Sub { duration } => t >= duration,
        PolicyConfig::Thr { threshold } => top(last).1 > threshold,
        PolicyConfig::Sat { threshold, duration } => {
            let (c, _) = top(last);
            let run = prefix.iter().rev().take_while(|r| top(r).0 == c && top(r).1 > threshold).count();
            run >= duration
        }
        PolicyConfig::Del { delta, duration } => {
            let mut start = 0;
            for s in 1..t {
                let c = top(&prefix[start]).0;
                let p = prefix[s][c] as f64;
                let broken = top(&prefix[s]).0 != c
                    || (p - prefix[start][c] as f64).abs() > delta
                    || (p - prefix[s - 1][c] as f64).abs() > delta;
                if broken {
                    start = s;
                }
            }
            t - start >= duration
        }
    }
}

/// Reference decision: first prefix length at which the policy fires, else
/// the final argmax over the full signal.
pub fn oracle(config: &PolicyConfig, rows: &[Row]) -> Decision {
    let n = rows.len();
    for t in 1..=n {
        if fires(config, &rows[..t]) {
            return Decision { decided_class: top(&rows[t - 1]).0, stop_index: t, triggered: true, psp: t as f64 / n as f64 };
        }
    }
    Decision { decided_class: top(&rows[n - 1]).0, stop_index: n, triggered: false, psp: 1.0 }
}

fn softmax_row(logits: &[f64; 5]) -> Row {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    std::array::from_fn(|i| (e[i] / s) as f32)
}

/// Random-walk logits with occasional jumps, so that runs of a stable argmax,
/// confidence plateaus and sudden switches all occur.
pub fn synthetic_trajectory(seed: u64, len: usize) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(0.05..1.0);
    let mut logits = [0.0f64; 5];
    let favourite = rng.gen_range(0..5);
    logits[favourite] = rng.gen_range(0.0..4.0);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.03) {
                logits[rng.gen_range(0..5)] += rng.gen_range(-4.0..4.0);
            }
            for l in logits.iter_mut() {
                *l += scale * rng.gen_range(-1.0..1.0);
            }
            logits[favourite] += rng.gen_range(0.0..0.15);
            softmax_row(&logits)
        })
        .collect()
}

/// A spread of configurations sized for short synthetic trajectories.
pub fn oracle_configs() -> Vec<PolicyConfig> {
    let mut out = vec![PolicyConfig::Non];
    for duration in [1, 2, 3, 5, 8, 13, 21, 40] {
        out.push(PolicyConfig::Sub { duration });
        for threshold in [0.3, 0.6, 0.9, 0.99] {
            out.push(PolicyConfig::Sat { threshold, duration });
        }
        for delta in [0.01, 0.05, 0.1, 0.3] {
            out.push(PolicyConfig::Del { delta, duration });
        }
    }
    for threshold in [0.21, 0.5, 0.6, 0.8, 0.9, 0.95, 0.99] {
        out.push(PolicyConfig::Thr { threshold });
    }
    out
}
