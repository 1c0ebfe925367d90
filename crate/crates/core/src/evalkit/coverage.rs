use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simworld::{observe, reset, TaskSpec, ViewTransform};

use super::endpoint::{PolicyEndpoint, Query};
use super::EvalError;

/// Cumulative lateral displacement at or below this counts as no decision.
pub const DEGENERATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Left,
    Right,
    Degenerate,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Left => "left",
            Mode::Right => "right",
            Mode::Degenerate => "degenerate",
        })
    }
}

/// Fraction of samples per observed mode; absent modes have fraction 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeCoverage(pub BTreeMap<Mode, f64>);

impl ModeCoverage {
    pub fn fraction(&self, m: Mode) -> f64 {
        self.0.get(&m).copied().unwrap_or(0.0)
    }
}

/// Label each chunk by the sign of `sum(dx)` over its first `t_a` rows.
pub fn mode_coverage(chunks: &[Vec<Vec<f32>>], t_a: usize) -> ModeCoverage {
    let mut counts: BTreeMap<Mode, usize> = BTreeMap::new();
    for c in chunks {
        let dx: f64 = c.iter().take(t_a).map(|row| row[0] as f64).sum();
        let m = if dx > DEGENERATE_EPS {
            Mode::Right
        } else if dx < -DEGENERATE_EPS {
            Mode::Left
        } else {
            Mode::Degenerate
        };
        *counts.entry(m).or_insert(0) += 1;
    }
    let n = chunks.len() as f64;
    ModeCoverage(counts.into_iter().map(|(m, k)| (m, k as f64 / n)).collect())
}

/// `n` chunks for the initial observation of episode `episode_seed`, drawn
/// with sampling seeds `sample_seed..sample_seed + n`.
pub fn sample_initial_chunks(
    endpoint: &mut dyn PolicyEndpoint,
    task: &TaskSpec,
    view: &ViewTransform,
    episode_seed: u64,
    n: usize,
    sample_seed: u64,
) -> Result<Vec<Vec<Vec<f32>>>, EvalError> {
    let spec = endpoint.spec();
    let state = reset(task, episode_seed);
    let window = vec![observe(&state, view, spec.grid); spec.t_o];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        endpoint.begin_episode(task, 0, episode_seed)?;
        let q = Query { episode: 0, tick: 0, seed: sample_seed.wrapping_add(i as u64), obs: &window, state: Some(&state) };
        out.push(endpoint.infer(&q)?);
    }
    Ok(out)
}
