use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::coverage::ModeCoverage;
use super::mse::MseReport;
use super::rollout::{EpisodeResult, Rollout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub task: String,
    pub n: usize,
    pub seed: u64,
    pub successes: usize,
    pub success_rate: f64,
    pub failures: BTreeMap<String, usize>,
    pub episodes: Vec<EpisodeResult>,
    /// Set when the endpoint failed before all episodes ran.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl RolloutSummary {
    pub fn of(r: &Rollout, partial: bool) -> Self {
        RolloutSummary {
            task: r.task.clone(),
            n: r.n(),
            seed: r.seed,
            successes: r.successes(),
            success_rate: r.success_rate(),
            failures: r.failure_counts(),
            episodes: r.episodes.clone(),
            partial,
        }
    }
}

/// Contents of `report.json`. Wall time is measured but kept out of the
/// serialized form so reports are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_mse: Option<MseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_coverage: Option<ModeCoverage>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn success_rate(&self) -> Option<f64> {
        self.rollout.as_ref().map(|r| r.success_rate)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
