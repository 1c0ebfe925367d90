use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::task::{Region, TaskKind, TaskSpec};
use super::view::ViewTransform;
use crate::translate::{FieldValue, Fields};

pub const MAX_STEP: f32 = 0.05;
pub const CONTROL_PERIOD_NS: i64 = 100_000_000;
pub const N_COLORS: usize = 2;
pub const GRID_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta_xy: [f32; 2],
    pub gripper_cmd: f32,
}

impl Action {
    pub const ZERO: Action = Action { delta_xy: [0.0, 0.0], gripper_cmd: 0.0 };

    pub fn new(delta_xy: [f32; 2], gripper_cmd: f32) -> Self {
        Action { delta_xy, gripper_cmd }
    }

    /// Box-clip the displacement to `MAX_STEP` and snap the gripper to {0, 1}.
    /// Non-finite inputs become zero.
    pub fn clipped(&self) -> Action {
        let c = |x: f32| if x.is_finite() { x.clamp(-MAX_STEP, MAX_STEP) } else { 0.0 };
        let g = if self.gripper_cmd >= 0.5 { 1.0 } else { 0.0 };
        Action { delta_xy: [c(self.delta_xy[0]), c(self.delta_xy[1])], gripper_cmd: g }
    }

    /// Flat `[dx, dy, gripper]`, the order of the sorted action fields.
    pub fn to_vec(&self) -> [f32; 3] {
        [self.delta_xy[0], self.delta_xy[1], self.gripper_cmd]
    }

    pub fn from_slice(v: &[f32]) -> Action {
        Action { delta_xy: [v[0], v[1]], gripper_cmd: v[2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub xy: [f32; 2],
    pub color_id: u8,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receptacle {
    pub xy: [f32; 2],
    pub color_id: u8,
    pub radius: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub xy: [f32; 2],
    pub radius: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub eef_xy: [f32; 2],
    pub gripper: f32,
    pub objects: Vec<Object>,
    pub receptacles: Vec<Receptacle>,
    pub obstacle: Option<Obstacle>,
    pub goal: Option<[f32; 2]>,
    /// Number of steps that ended inside the obstacle.
    pub contacts: u32,
    pub steps: u32,
    pub sim_t_ns: i64,
}

pub(crate) fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn sample(rng: &mut ChaCha8Rng, r: &Region) -> [f32; 2] {
    [rng.random_range(r.min[0]..=r.max[0]), rng.random_range(r.min[1]..=r.max[1])]
}

/// Sample `n` points from `r` with pairwise distance at least `sep`. Gives up
/// on separation after a bounded number of attempts so any range works.
fn sample_separated(rng: &mut ChaCha8Rng, r: &Region, n: usize, sep: f32, avoid: &[[f32; 2]]) -> Vec<[f32; 2]> {
    let mut out: Vec<[f32; 2]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = sample(rng, r);
        for _ in 0..1000 {
            if out.iter().chain(avoid).all(|q| dist(p, *q) >= sep) {
                break;
            }
            p = sample(rng, r);
        }
        out.push(p);
    }
    out
}

/// Initial state, a pure function of `(task, seed)`.
pub fn reset(task: &TaskSpec, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eef_xy = sample(&mut rng, &task.eef_start);
    let goal = task.goal.map(|r| sample_separated(&mut rng, &r, 1, task.min_separation, &[eef_xy])[0]);
    let n = task.n_objects();
    let mut objects = Vec::new();
    let mut receptacles = Vec::new();
    if let (Some(obj_r), true) = (task.objects, n > 0) {
        let mut colors: Vec<u8> = (0..n as u8).collect();
        colors.shuffle(&mut rng);
        for (xy, c) in sample_separated(&mut rng, &obj_r, n, task.min_separation, &[]).into_iter().zip(&colors) {
            objects.push(Object { xy, color_id: *c, held: false });
        }
        if !task.receptacle_slots.is_empty() {
            for (c, &xy) in task.receptacle_slots.iter().take(n).enumerate() {
                receptacles.push(Receptacle { xy, color_id: c as u8, radius: task.receptacle_radius });
            }
        } else if let Some(rec_r) = task.receptacles {
            colors.shuffle(&mut rng);
            for (xy, c) in sample_separated(&mut rng, &rec_r, n, task.min_separation, &[]).into_iter().zip(&colors) {
                receptacles.push(Receptacle { xy, color_id: *c, radius: task.receptacle_radius });
            }
        }
    }
    let obstacle = task.obstacle.map(|r| Obstacle { xy: sample(&mut rng, &r), radius: task.obstacle_radius });
    WorldState {
        eef_xy,
        gripper: 0.0,
        objects,
        receptacles,
        obstacle,
        goal,
        contacts: 0,
        steps: 0,
        sim_t_ns: 0,
    }
}

/// Advance one control period.
pub fn step(state: &WorldState, action: &Action, task: &TaskSpec) -> WorldState {
    let a = action.clipped();
    let mut s = state.clone();
    s.eef_xy = [
        (s.eef_xy[0] + a.delta_xy[0]).clamp(0.0, 1.0),
        (s.eef_xy[1] + a.delta_xy[1]).clamp(0.0, 1.0),
    ];
    if let Some(o) = s.objects.iter_mut().find(|o| o.held) {
        o.xy = s.eef_xy;
    }
    if a.gripper_cmd == 1.0 {
        s.gripper = 1.0;
        if !s.objects.iter().any(|o| o.held) {
            let eef = s.eef_xy;
            let nearest = s
                .objects
                .iter_mut()
                .map(|o| (dist(o.xy, eef), o))
                .filter(|(d, _)| *d <= task.grasp_radius)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, o)) = nearest {
                o.held = true;
                o.xy = eef;
            }
        }
    } else {
        s.gripper = 0.0;
        for o in &mut s.objects {
            o.held = false;
        }
    }
    if let Some(ob) = &s.obstacle {
        if dist(s.eef_xy, ob.xy) < ob.radius {
            s.contacts += 1;
        }
    }
    s.steps += 1;
    s.sim_t_ns += CONTROL_PERIOD_NS;
    s
}

fn placed(o: &Object, receptacles: &[Receptacle]) -> bool {
    !o.held
        && receptacles
            .iter()
            .any(|r| r.color_id == o.color_id && dist(o.xy, r.xy) <= r.radius)
}

/// True once this object rests in a receptacle of its color.
pub fn object_placed(state: &WorldState, i: usize) -> bool {
    placed(&state.objects[i], &state.receptacles)
}

pub fn is_success(state: &WorldState, task: &TaskSpec) -> bool {
    match task.name {
        TaskKind::Reach => state.goal.is_some_and(|g| dist(state.eef_xy, g) <= task.goal_tolerance),
        TaskKind::PickPlace | TaskKind::Sorting => {
            !state.objects.is_empty() && state.objects.iter().all(|o| placed(o, &state.receptacles))
        }
        TaskKind::BimodalAvoid => {
            state.contacts == 0 && state.goal.is_some_and(|g| dist(state.eef_xy, g) <= task.goal_tolerance)
        }
    }
}

/// Length of the fixed-layout scene vector.
pub const SCENE_DIM: usize = 4 + 3 + 4 + 2 * (3 + 1 + N_COLORS) + 2 * (3 + N_COLORS);

/// Scene vector in the view frame. Layout, with absent slots zero-filled:
///
/// ```text
/// [0..4)    view of the workspace corners (0,0) and (1,0)
/// [4..7)    goal: present, x, y
/// [7..11)   obstacle: present, x, y, radius
/// [11..23)  2 objects: present, x, y, held, color one-hot
/// [23..33)  2 receptacles: present, x, y, color one-hot
/// ```
pub fn scene_vector(state: &WorldState, view: &ViewTransform) -> Vec<f32> {
    let mut v = Vec::with_capacity(SCENE_DIM);
    v.extend(view.apply([0.0, 0.0]));
    v.extend(view.apply([1.0, 0.0]));
    match state.goal {
        Some(g) => {
            v.push(1.0);
            v.extend(view.apply(g));
        }
        None => v.extend([0.0; 3]),
    }
    match &state.obstacle {
        Some(o) => {
            v.push(1.0);
            v.extend(view.apply(o.xy));
            v.push(o.radius);
        }
        None => v.extend([0.0; 4]),
    }
    let one_hot = |c: u8| (0..N_COLORS).map(move |k| if k == c as usize { 1.0 } else { 0.0 });
    for i in 0..2 {
        match state.objects.get(i) {
            Some(o) => {
                v.push(1.0);
                v.extend(view.apply(o.xy));
                v.push(if o.held { 1.0 } else { 0.0 });
                v.extend(one_hot(o.color_id));
            }
            None => v.extend([0.0; 4 + N_COLORS]),
        }
    }
    for i in 0..2 {
        match state.receptacles.get(i) {
            Some(r) => {
                v.push(1.0);
                v.extend(view.apply(r.xy));
                v.extend(one_hot(r.color_id));
            }
            None => v.extend([0.0; 3 + N_COLORS]),
        }
    }
    debug_assert_eq!(v.len(), SCENE_DIM);
    v
}

/// 8x8 occupancy render in the view frame, row-major `[row=y][col=x][channel]`.
/// Channels: objects, receptacles with goal and obstacle, end effector.
pub fn grid_render(state: &WorldState, view: &ViewTransform) -> Vec<f32> {
    let mut g = vec![0.0f32; GRID_SIZE * GRID_SIZE * 3];
    let mut mark = |p: [f32; 2], ch: usize| {
        let q = view.apply(p);
        let cell = |x: f32| ((x * GRID_SIZE as f32).floor() as i64).clamp(0, GRID_SIZE as i64 - 1) as usize;
        g[(cell(q[1]) * GRID_SIZE + cell(q[0])) * 3 + ch] = 1.0;
    };
    for o in &state.objects {
        mark(o.xy, 0);
    }
    for r in &state.receptacles {
        mark(r.xy, 1);
    }
    if let Some(goal) = state.goal {
        mark(goal, 1);
    }
    if let Some(o) = &state.obstacle {
        mark(o.xy, 1);
    }
    mark(state.eef_xy, 2);
    g
}

/// Proprioception in the robot frame: `[x, y, gripper]`.
pub fn eef_pose(state: &WorldState) -> [f32; 3] {
    [state.eef_xy[0], state.eef_xy[1], state.gripper]
}

/// Observation fields as the translated streams deliver them.
pub fn observe(state: &WorldState, view: &ViewTransform, with_grid: bool) -> Fields {
    let mut f = Fields::new();
    f.insert("eef_pose".into(), FieldValue::vector(eef_pose(state).to_vec()));
    f.insert("scene".into(), FieldValue::vector(scene_vector(state, view)));
    if with_grid {
        let grid = FieldValue::f32(vec![GRID_SIZE, GRID_SIZE, 3], grid_render(state, view))
            .expect("grid render has a fixed shape");
        f.insert("grid".into(), grid);
    }
    f
}
