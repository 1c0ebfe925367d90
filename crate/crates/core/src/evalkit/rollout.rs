use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::simworld::{is_success, observe, reset, step, Action, TaskSpec, ViewTransform, WorldState};
use crate::translate::Fields;

use super::endpoint::{query_seed, PolicyEndpoint, Query, ACTION_DIM};
use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub task: TaskSpec,
    pub n: usize,
    pub seed: u64,
    pub view: ViewTransform,
}

impl RolloutConfig {
    pub fn new(task: TaskSpec, n: usize, seed: u64) -> Self {
        RolloutConfig { task, n, seed, view: ViewTransform::identity() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub tick: usize,
    pub t_ns: i64,
    pub eef_xy: [f32; 2],
    pub gripper: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub points: Vec<TrajPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub steps: u32,
    pub contacts: u32,
    /// `collision` if the end effector ever touched the obstacle, else `timeout`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub task: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeResult>,
    pub trajectories: Vec<Trajectory>,
}

impl Rollout {
    pub fn n(&self) -> usize {
        self.episodes.len()
    }

    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| e.success).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            0.0
        } else {
            self.successes() as f64 / self.n() as f64
        }
    }

    pub fn failure_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for f in self.episodes.iter().filter_map(|e| e.failure.as_ref()) {
            *m.entry(f.clone()).or_insert(0) += 1;
        }
        m
    }
}

fn point(state: &WorldState) -> TrajPoint {
    TrajPoint { tick: state.steps as usize, t_ns: state.sim_t_ns, eef_xy: state.eef_xy, gripper: state.gripper }
}

fn run_episode(
    endpoint: &mut dyn PolicyEndpoint,
    cfg: &RolloutConfig,
    episode: usize,
    seed: u64,
) -> Result<(EpisodeResult, Trajectory), EvalError> {
    let spec = endpoint.spec();
    let task = &cfg.task;
    endpoint.begin_episode(task, episode, seed)?;
    let mut state = reset(task, seed);
    let mut points = vec![point(&state)];
    let first = observe(&state, &cfg.view, spec.grid);
    // the last T_o frames, padded at the start with the first frame
    let mut window: Vec<Fields> = vec![first; spec.t_o];
    let done = |s: &WorldState| is_success(s, task) || s.steps as usize >= task.max_steps;

    while !done(&state) {
        let tick = state.steps as usize;
        let q = Query { episode, tick, seed: query_seed(seed, tick), obs: &window, state: Some(&state) };
        let rows = endpoint.infer(&q)?;
        if rows.len() < spec.t_a {
            return Err(EvalError::SchemaMismatch(format!("chunk has {} rows, need {}", rows.len(), spec.t_a)));
        }
        for row in &rows[..spec.t_a] {
            if row.len() != ACTION_DIM {
                return Err(EvalError::SchemaMismatch(format!("action has {} dims, need {ACTION_DIM}", row.len())));
            }
            state = step(&state, &Action::from_slice(row), task);
            points.push(point(&state));
            window.remove(0);
            window.push(observe(&state, &cfg.view, spec.grid));
            if done(&state) {
                break;
            }
        }
    }
    let success = is_success(&state, task);
    let failure = match (success, state.contacts > 0) {
        (true, _) => None,
        (false, true) => Some("collision".to_string()),
        (false, false) => Some("timeout".to_string()),
    };
    let result = EpisodeResult { episode, seed, success, steps: state.steps, contacts: state.contacts, failure };
    Ok((result, Trajectory { episode, seed, success, points }))
}

/// Closed-loop evaluation with receding-horizon execution: query a chunk,
/// execute its first `T_a` actions, re-query. Episode `i` uses seed
/// `cfg.seed + i`. If the endpoint goes away the error carries the episodes
/// finished so far.
pub fn rollout(endpoint: &mut dyn PolicyEndpoint, cfg: &RolloutConfig) -> Result<Rollout, EvalError> {
    let mut out = Rollout {
        task: cfg.task.name.to_string(),
        seed: cfg.seed,
        episodes: Vec::with_capacity(cfg.n),
        trajectories: Vec::with_capacity(cfg.n),
    };
    for i in 0..cfg.n {
        match run_episode(endpoint, cfg, i, cfg.seed.wrapping_add(i as u64)) {
            Ok((r, t)) => {
                out.episodes.push(r);
                out.trajectories.push(t);
            }
            Err(EvalError::EndpointUnavailable { reason, .. }) => {
                return Err(EvalError::EndpointUnavailable { reason, partial: Some(Box::new(out)) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
