//! Deterministic 2-D desk world with a scripted teleoperation expert.
//!
//! The end effector is a point in the unit square. Each control period it
//! moves by a clipped displacement and may close its gripper on a nearby
//! object. Sessions publish native device messages at fixed rates on a
//! simulated clock.

mod expert;
mod session;
mod task;
mod view;
mod world;

use thiserror::Error;

use crate::bus::BusError;

pub use expert::{expert_episode, ScriptedExpert, Side};
pub use session::{
    run_session, SessionConfig, SessionTopics, SimSession, StreamRates, CAMERA_SCHEMA, FOLLOWER_SCHEMA,
    LEADER_SCHEMA,
};
pub use task::{Region, TaskKind, TaskSpec};
pub use view::{ViewTransform, WORKSPACE_CENTER};
pub use world::{
    eef_pose, grid_render, is_success, object_placed, observe, reset, scene_vector, step, Action, Object,
    Obstacle, Receptacle, WorldState, CONTROL_PERIOD_NS, GRID_SIZE, MAX_STEP, N_COLORS, SCENE_DIM,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("task already done")]
    TaskAlreadyDone,
    #[error(transparent)]
    Bus(#[from] BusError),
}
