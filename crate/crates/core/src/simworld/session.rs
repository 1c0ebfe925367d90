use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::expert::ScriptedExpert;
use super::task::TaskSpec;
use super::view::ViewTransform;
use super::world::{eef_pose, grid_render, is_success, reset, scene_vector, step, Action, WorldState, CONTROL_PERIOD_NS, GRID_SIZE};
use super::SimError;
use crate::bus::{Bus, Topic};
use crate::recorder::{SessionMeta, StreamRole, StreamSpec};
use crate::translate::{AdapterSpec, FieldRule, FieldValue, Fields, TranslateError, Translator};

pub const FOLLOWER_SCHEMA: &str = "sim.follower_state.v1";
pub const LEADER_SCHEMA: &str = "sim.leader_cmd.v1";
pub const CAMERA_SCHEMA: &str = "sim.scene_cam.v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamRates {
    pub state_hz: f64,
    pub cmd_hz: f64,
    pub obs_hz: f64,
}

impl Default for StreamRates {
    fn default() -> Self {
        StreamRates { state_hz: 60.0, cmd_hz: 160.0, obs_hz: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub task: TaskSpec,
    pub seed: u64,
    pub view: ViewTransform,
    pub operator: String,
    pub rates: StreamRates,
    pub noise_sigma: f32,
    /// Also publish the occupancy grid on the camera stream.
    pub grid: bool,
    /// Topic prefix so concurrent sessions can share a bus.
    pub namespace: Option<String>,
    /// Stop publishing at this sim time even if the task is not finished.
    pub max_duration_ns: Option<i64>,
}

impl SessionConfig {
    pub fn new(task: TaskSpec, seed: u64) -> Self {
        SessionConfig {
            task,
            seed,
            view: ViewTransform::identity(),
            operator: "expert".into(),
            rates: StreamRates::default(),
            noise_sigma: 0.0,
            grid: false,
            namespace: None,
            max_duration_ns: None,
        }
    }

    pub fn meta(&self) -> SessionMeta {
        SessionMeta {
            task: self.task.name.to_string(),
            operator: self.operator.clone(),
            seed: self.seed,
            view_id: self.view.view_id.clone(),
        }
    }

    pub fn topics(&self) -> SessionTopics {
        SessionTopics::new(self.namespace.as_deref())
    }

    /// Recorder specs for the three translated streams.
    pub fn stream_specs(&self) -> Vec<StreamSpec> {
        let t = self.topics();
        vec![
            StreamSpec::new(t.state, self.rates.state_hz, StreamRole::State),
            StreamSpec::new(t.cmd, self.rates.cmd_hz, StreamRole::Command),
            StreamSpec::new(t.obs, self.rates.obs_hz, StreamRole::Observation),
        ]
    }

    /// A translator with adapters for the three native device schemas.
    pub fn translator(&self) -> Result<Translator, TranslateError> {
        let t = self.topics();
        let mut tr = Translator::new();
        let follower = AdapterSpec {
            native_schema_id: FOLLOWER_SCHEMA.into(),
            input_topic: t.native_state,
            output_topic: t.state,
            rules: vec![],
        };
        tr.register_adapter(follower, Arc::new(follower_adapter))?;
        tr.register_rules(AdapterSpec {
            native_schema_id: LEADER_SCHEMA.into(),
            input_topic: t.native_cmd,
            output_topic: t.cmd,
            rules: vec![FieldRule::new("delta_xy", "delta_xy"), FieldRule::new("grip", "gripper_cmd")],
        })?;
        let mut rules = vec![FieldRule::new("scene", "scene")];
        if self.grid {
            rules.push(FieldRule::new("grid", "grid").reshaped(vec![GRID_SIZE, GRID_SIZE, 3]));
        }
        tr.register_rules(AdapterSpec {
            native_schema_id: CAMERA_SCHEMA.into(),
            input_topic: t.native_obs,
            output_topic: t.obs,
            rules,
        })?;
        Ok(tr)
    }
}

/// The follower reports its tool position and a boolean gripper state; the
/// unified field packs both into `eef_pose = [x, y, gripper]`.
fn follower_adapter(payload: &[u8]) -> Result<Fields, TranslateError> {
    #[derive(Deserialize)]
    struct Native {
        tcp_xy: [f32; 2],
        gripper_closed: bool,
    }
    let n: Native = serde_json::from_slice(payload).map_err(|e| TranslateError::MalformedPayload(e.to_string()))?;
    let g = if n.gripper_closed { 1.0 } else { 0.0 };
    let pose = FieldValue::f32(vec![3], vec![n.tcp_xy[0], n.tcp_xy[1], g])
        .map_err(|e| TranslateError::MalformedPayload(e.to_string()))?;
    Ok(Fields::from([("eef_pose".to_string(), pose)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTopics {
    pub native_state: Topic,
    pub native_cmd: Topic,
    pub native_obs: Topic,
    pub state: Topic,
    pub cmd: Topic,
    pub obs: Topic,
    /// Pattern covering the native topics.
    pub native_pattern: String,
}

impl SessionTopics {
    pub fn new(namespace: Option<&str>) -> Self {
        let t = |name: &str| {
            let base = Topic::new(name).expect("static topic");
            match namespace {
                Some(ns) => base.namespaced(ns).expect("namespace must be a valid topic prefix"),
                None => base,
            }
        };
        let native_pattern = match namespace {
            Some(ns) => format!("{ns}/native/*/*"),
            None => "native/*/*".into(),
        };
        SessionTopics {
            native_state: t("native/state/follower"),
            native_cmd: t("native/cmd/leader"),
            native_obs: t("native/obs/scene"),
            state: t("state/follower"),
            cmd: t("cmd/leader"),
            obs: t("obs/scene"),
            native_pattern,
        }
    }
}

/// Frame times of a stream at `hz` falling in `[from, to)`, as `(index, t_ns)`.
fn frames_in(hz: f64, from: i64, to: i64) -> impl Iterator<Item = (u64, i64)> {
    let t = move |j: u64| (j as f64 * 1e9 / hz).round() as i64;
    let mut j = ((from as f64) * hz / 1e9).floor().max(0.0) as u64;
    while j > 0 && t(j - 1) >= from {
        j -= 1;
    }
    while t(j) < from {
        j += 1;
    }
    (j..).map(move |j| (j, t(j))).take_while(move |&(_, tj)| tj < to)
}

/// A teleoperation session driven by the scripted expert, stepped one control
/// period at a time so consumers can drain the bus in between.
pub struct SimSession {
    cfg: SessionConfig,
    topics: SessionTopics,
    bus: Bus,
    expert: ScriptedExpert,
    state: WorldState,
    pending: Option<Action>,
    k: i64,
    done: bool,
    states: Vec<WorldState>,
    actions: Vec<Action>,
}

impl SimSession {
    pub fn new(cfg: SessionConfig, bus: Bus) -> Result<Self, SimError> {
        cfg.task.validate()?;
        cfg.view.validate()?;
        let state = reset(&cfg.task, cfg.seed);
        let expert = ScriptedExpert::new(&cfg.task, cfg.seed, cfg.noise_sigma);
        Ok(SimSession {
            topics: cfg.topics(),
            cfg,
            bus,
            expert,
            states: vec![state.clone()],
            state,
            pending: None,
            k: 0,
            done: false,
            actions: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// World states at every control tick, initial state first.
    pub fn states(&self) -> &[WorldState] {
        &self.states
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Publish one control period of native frames. Returns false once the
    /// session has finished.
    pub fn advance(&mut self) -> Result<bool, SimError> {
        if self.done {
            return Ok(false);
        }
        let t0 = self.k * CONTROL_PERIOD_NS;
        if self.cfg.max_duration_ns.is_some_and(|d| t0 >= d) {
            self.done = true;
            return Ok(false);
        }
        if let Some(a) = self.pending.take() {
            self.state = step(&self.state, &a, &self.cfg.task);
            self.states.push(self.state.clone());
        }
        let finished = is_success(&self.state, &self.cfg.task) || self.state.steps as usize >= self.cfg.task.max_steps;
        if !finished {
            let a = self.expert.act(&self.state)?;
            self.actions.push(a);
            self.pending = Some(a);
        }
        let mut t1 = t0 + CONTROL_PERIOD_NS;
        if let Some(d) = self.cfg.max_duration_ns {
            t1 = t1.min(d);
        }
        self.publish_period(t0, t1)?;
        self.k += 1;
        if finished {
            self.done = true;
        }
        Ok(!self.done)
    }

    fn publish_period(&self, t0: i64, t1: i64) -> Result<(), SimError> {
        let r = self.cfg.rates;
        // (t_ns, stream) in publish order; equal times go state, cmd, camera
        let mut due: Vec<(i64, u8)> = frames_in(r.state_hz, t0, t1).map(|(_, t)| (t, 0)).collect();
        if self.pending.is_some() {
            due.extend(frames_in(r.cmd_hz, t0, t1).map(|(_, t)| (t, 1)));
        }
        due.extend(frames_in(r.obs_hz, t0, t1).map(|(_, t)| (t, 2)));
        due.sort_unstable();

        let s = &self.state;
        let state_payload = {
            let p = eef_pose(s);
            serde_json::to_vec(&json!({"tcp_xy": [p[0], p[1]], "gripper_closed": p[2] == 1.0}))
        };
        let cmd_payload = self
            .pending
            .map(|a| serde_json::to_vec(&json!({"delta_xy": a.delta_xy, "grip": a.gripper_cmd == 1.0})));
        let obs_payload = {
            let mut v = json!({"scene": scene_vector(s, &self.cfg.view)});
            if self.cfg.grid {
                v["grid"] = json!(grid_render(s, &self.cfg.view));
            }
            serde_json::to_vec(&v)
        };
        let enc = |r: serde_json::Result<Vec<u8>>| r.expect("in-memory JSON encoding");
        let state_payload = enc(state_payload);
        let obs_payload = enc(obs_payload);
        let cmd_payload = cmd_payload.map(enc);

        for (t, stream) in due {
            let (topic, source, payload) = match stream {
                0 => (&self.topics.native_state, "follower", &state_payload),
                1 => (&self.topics.native_cmd, "leader", cmd_payload.as_ref().expect("cmd only due with an action")),
                _ => (&self.topics.native_obs, "scene_cam", &obs_payload),
            };
            self.bus.publish(topic, source, t, payload.clone())?;
        }
        Ok(())
    }
}

/// Run a whole session, publishing native streams until success, `max_steps`
/// or the duration cap.
pub fn run_session(cfg: SessionConfig, bus: &Bus) -> Result<SimSession, SimError> {
    let mut s = SimSession::new(cfg, bus.clone())?;
    while s.advance()? {}
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::TaskKind;

    #[test]
    fn frame_grid_windows_partition_time() {
        for hz in [30.0, 60.0, 160.0, 7.0] {
            let mut all = Vec::new();
            for k in 0..10 {
                all.extend(frames_in(hz, k * CONTROL_PERIOD_NS, (k + 1) * CONTROL_PERIOD_NS));
            }
            let idx: Vec<u64> = all.iter().map(|x| x.0).collect();
            let expected: Vec<u64> = (0..idx.len() as u64).collect();
            assert_eq!(idx, expected);
            assert_eq!(all.len(), hz as usize);
        }
    }

    #[test]
    fn one_second_publishes_native_rates() {
        let bus = Bus::new();
        let sub = bus.subscribe("native/*/*").unwrap();
        let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::Sorting), 1);
        cfg.max_duration_ns = Some(1_000_000_000);
        run_session(cfg, &bus).unwrap();
        let msgs = sub.drain_now();
        let count = |t: &str| msgs.iter().filter(|m| m.topic.as_str() == t).count();
        assert_eq!(count("native/state/follower"), 60);
        assert_eq!(count("native/cmd/leader"), 160);
        assert_eq!(count("native/obs/scene"), 30);
        assert!(msgs.windows(2).all(|w| w[0].t_ns <= w[1].t_ns));
    }

    #[test]
    fn same_seed_same_bytes() {
        let run = || {
            let bus = Bus::new();
            let sub = bus.subscribe("native/*/*").unwrap();
            let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::PickPlace), 4);
            cfg.noise_sigma = 0.01;
            cfg.grid = true;
            run_session(cfg, &bus).unwrap();
            sub.drain_now()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn namespaced_topics() {
        let t = SessionTopics::new(Some("s7"));
        assert_eq!(t.state.as_str(), "s7/state/follower");
        assert_eq!(t.native_pattern, "s7/native/*/*");
    }

    #[test]
    fn adapters_translate_native_payloads() {
        let cfg = SessionConfig { grid: true, ..SessionConfig::new(TaskSpec::builtin(TaskKind::Reach), 0) };
        let tr = cfg.translator().unwrap();
        let f = follower_adapter(br#"{"tcp_xy":[0.25,0.5],"gripper_closed":true}"#).unwrap();
        assert_eq!(f["eef_pose"].as_f32().unwrap(), &[0.25, 0.5, 1.0]);
        assert!(follower_adapter(br#"{"tcp_xy":[0.25]}"#).is_err());
        assert_eq!(tr.input_topics().count(), 3);
    }
}
