use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::task::{TaskKind, TaskSpec};
use super::world::{dist, is_success, object_placed, Action, WorldState, MAX_STEP};
use super::SimError;

/// Distance under which the expert treats a waypoint as reached.
const ARRIVE: f32 = 0.01;
/// Clearance added to the obstacle radius for the detour waypoint.
const DETOUR_MARGIN: f32 = 0.13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f32 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// Scripted teleoperator. The detour side for bimodal-avoid is drawn once
/// per episode at construction.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    task: TaskSpec,
    side: Side,
    noise: Option<Normal<f32>>,
    rng: ChaCha8Rng,
}

/// Straight-line step toward `target`, scaled so no component exceeds `MAX_STEP`.
fn toward(from: [f32; 2], target: [f32; 2]) -> [f32; 2] {
    let d = [target[0] - from[0], target[1] - from[1]];
    let m = d[0].abs().max(d[1].abs());
    if m <= MAX_STEP {
        d
    } else {
        let k = MAX_STEP / m;
        [d[0] * k, d[1] * k]
    }
}

impl ScriptedExpert {
    pub fn new(task: &TaskSpec, seed: u64, noise_sigma: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4be_u64);
        let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
        ScriptedExpert { task: task.clone(), side, noise, rng }
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Next action, or `TaskAlreadyDone` once the task is solved.
    pub fn act(&mut self, state: &WorldState) -> Result<Action, SimError> {
        if is_success(state, &self.task) {
            return Err(SimError::TaskAlreadyDone);
        }
        let mut a = self.plan(state);
        if let Some(n) = &self.noise {
            for d in &mut a.delta_xy {
                *d += n.sample(&mut self.rng);
            }
        }
        Ok(a.clipped())
    }

    fn plan(&self, s: &WorldState) -> Action {
        match self.task.name {
            TaskKind::Reach => Action::new(toward(s.eef_xy, s.goal.unwrap_or(s.eef_xy)), 0.0),
            TaskKind::BimodalAvoid => {
                let goal = s.goal.unwrap_or(s.eef_xy);
                let target = match &s.obstacle {
                    Some(o) if s.eef_xy[1] < o.xy[1] - 1e-3 => {
                        [o.xy[0] + self.side.sign() * (o.radius + DETOUR_MARGIN), o.xy[1]]
                    }
                    _ => goal,
                };
                Action::new(toward(s.eef_xy, target), 0.0)
            }
            TaskKind::PickPlace | TaskKind::Sorting => {
                if let Some(o) = s.objects.iter().find(|o| o.held) {
                    let Some(r) = s.receptacles.iter().find(|r| r.color_id == o.color_id) else {
                        return Action::new([0.0, 0.0], 0.0);
                    };
                    if dist(s.eef_xy, r.xy) <= ARRIVE {
                        Action::new([0.0, 0.0], 0.0)
                    } else {
                        Action::new(toward(s.eef_xy, r.xy), 1.0)
                    }
                } else {
                    let next = (0..s.objects.len()).find(|&i| !object_placed(s, i));
                    match next {
                        Some(i) if dist(s.eef_xy, s.objects[i].xy) <= ARRIVE => Action::new([0.0, 0.0], 1.0),
                        Some(i) => Action::new(toward(s.eef_xy, s.objects[i].xy), 0.0),
                        None => Action::ZERO,
                    }
                }
            }
        }
    }
}

/// Run the expert from `reset(task, seed)` until success or `max_steps`.
/// Returns the visited states (initial state first) and the actions taken.
pub fn expert_episode(
    task: &TaskSpec,
    seed: u64,
    noise_sigma: f32,
) -> (Vec<WorldState>, Vec<Action>, ScriptedExpert) {
    let mut expert = ScriptedExpert::new(task, seed, noise_sigma);
    let mut s = super::world::reset(task, seed);
    let mut states = vec![s.clone()];
    let mut actions = Vec::new();
    while (s.steps as usize) < task.max_steps {
        let Ok(a) = expert.act(&s) else { break };
        s = super::world::step(&s, &a, task);
        states.push(s.clone());
        actions.push(a);
    }
    (states, actions, expert)
}
