use crate::policy::{ChunkConfig, FieldLayout, Layout, PolicyCheckpoint, PolicyKind, SamplerConfig};
use crate::simworld::{step, ScriptedExpert, TaskSpec, WorldState};
use crate::translate::Fields;

use super::EvalError;

/// Width of an action row: `[dx, dy, gripper_cmd]`, the field-name order of
/// `delta_xy` then `gripper_cmd`.
pub const ACTION_DIM: usize = 3;

pub(crate) fn canonical_action_layout() -> Layout {
    Layout(vec![
        FieldLayout { name: "delta_xy".into(), shape: vec![2] },
        FieldLayout { name: "gripper_cmd".into(), shape: vec![1] },
    ])
}

/// What an endpoint needs from the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointSpec {
    pub t_o: usize,
    pub t_a: usize,
    /// Observations carry the rendered `grid` field.
    pub grid: bool,
}

/// One inference request.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub episode: usize,
    pub tick: usize,
    pub seed: u64,
    /// `T_o` frames, oldest first.
    pub obs: &'a [Fields],
    /// Simulator state, present only in closed-loop rollouts.
    pub state: Option<&'a WorldState>,
}

pub trait PolicyEndpoint {
    fn spec(&self) -> EndpointSpec;

    /// Called before each rollout episode.
    fn begin_episode(&mut self, _task: &TaskSpec, _episode: usize, _seed: u64) -> Result<(), EvalError> {
        Ok(())
    }

    /// At least `T_a` action rows of width [`ACTION_DIM`].
    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError>;
}

impl<E: PolicyEndpoint + ?Sized> PolicyEndpoint for &mut E {
    fn spec(&self) -> EndpointSpec {
        (**self).spec()
    }
    fn begin_episode(&mut self, task: &TaskSpec, episode: usize, seed: u64) -> Result<(), EvalError> {
        (**self).begin_episode(task, episode, seed)
    }
    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        (**self).infer(q)
    }
}

/// Sampling seed for the query at `tick` of an episode seeded `episode_seed`.
pub fn query_seed(episode_seed: u64, tick: usize) -> u64 {
    episode_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tick as u64
}

/// Flat action row from an `Action`.
pub fn action_row(a: &crate::simworld::Action) -> Vec<f32> {
    a.to_vec().to_vec()
}

/// A checkpoint run in-process.
pub struct CheckpointEndpoint {
    pub ckpt: PolicyCheckpoint,
    pub sampler: SamplerConfig,
}

impl CheckpointEndpoint {
    pub fn new(ckpt: PolicyCheckpoint, sampler: SamplerConfig) -> Result<Self, EvalError> {
        if ckpt.action_layout != canonical_action_layout() {
            return Err(EvalError::SchemaMismatch(format!(
                "checkpoint actions {:?} are not delta_xy[2] + gripper_cmd[1]",
                ckpt.action_layout.names()
            )));
        }
        if ckpt.kind == PolicyKind::Diffusion {
            sampler.validate(ckpt.schedule.t_steps)?;
        }
        Ok(CheckpointEndpoint { ckpt, sampler })
    }

    pub fn window(&self, obs: &[Fields]) -> Result<Vec<f32>, EvalError> {
        let mut out = Vec::with_capacity(obs.len() * self.ckpt.obs_frame_dim());
        for f in obs {
            out.extend(self.ckpt.flatten_obs(f)?);
        }
        Ok(out)
    }

    /// The chunk for an observation window and sampling seed.
    pub fn chunk(&self, obs: &[Fields], seed: u64) -> Result<Vec<Vec<f32>>, EvalError> {
        let w = self.window(obs)?;
        Ok(self.ckpt.infer(&w, &self.sampler, seed)?)
    }
}

impl PolicyEndpoint for CheckpointEndpoint {
    fn spec(&self) -> EndpointSpec {
        let ChunkConfig { t_o, t_a, .. } = self.ckpt.chunk;
        EndpointSpec { t_o, t_a, grid: self.ckpt.obs_layout.find("grid").is_some() }
    }

    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        self.chunk(q.obs, q.seed)
    }
}

/// The scripted demonstrator, planning a chunk by simulating ahead.
pub struct ExpertEndpoint {
    task: TaskSpec,
    noise_sigma: f32,
    t_a: usize,
    expert: Option<ScriptedExpert>,
}

impl ExpertEndpoint {
    pub fn new(task: TaskSpec, noise_sigma: f32, t_a: usize) -> Self {
        ExpertEndpoint { task, noise_sigma, t_a, expert: None }
    }
}

impl PolicyEndpoint for ExpertEndpoint {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: 1, t_a: self.t_a, grid: false }
    }

    fn begin_episode(&mut self, task: &TaskSpec, _episode: usize, seed: u64) -> Result<(), EvalError> {
        self.task = task.clone();
        self.expert = Some(ScriptedExpert::new(task, seed, self.noise_sigma));
        Ok(())
    }

    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        let state = q.state.ok_or_else(|| EvalError::unavailable("the expert needs simulator state"))?;
        let expert = self.expert.as_mut().ok_or_else(|| EvalError::unavailable("no episode started"))?;
        let mut s = state.clone();
        let mut rows = Vec::with_capacity(self.t_a);
        for _ in 0..self.t_a {
            let a = expert.act(&s).unwrap_or(crate::simworld::Action::ZERO);
            rows.push(action_row(&a));
            s = step(&s, &a, &self.task);
        }
        Ok(rows)
    }
}

/// Replays recorded action labels: `episodes[e][tick]`. Past the end of an
/// episode the last label repeats.
pub struct ReplayEndpoint {
    pub episodes: Vec<Vec<Vec<f32>>>,
    pub t_a: usize,
}

impl PolicyEndpoint for ReplayEndpoint {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: 1, t_a: self.t_a, grid: false }
    }

    fn infer(&mut self, q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        let ep = self
            .episodes
            .get(q.episode)
            .filter(|e| !e.is_empty())
            .ok_or_else(|| EvalError::unavailable(format!("no recorded episode {}", q.episode)))?;
        Ok((0..self.t_a).map(|j| ep[(q.tick + j).min(ep.len() - 1)].clone()).collect())
    }
}

/// Never moves.
pub struct ZeroEndpoint {
    pub t_a: usize,
}

impl PolicyEndpoint for ZeroEndpoint {
    fn spec(&self) -> EndpointSpec {
        EndpointSpec { t_o: 1, t_a: self.t_a, grid: false }
    }

    fn infer(&mut self, _q: &Query) -> Result<Vec<Vec<f32>>, EvalError> {
        Ok(vec![vec![0.0; ACTION_DIM]; self.t_a])
    }
}
