//! Diffusion policy over action chunks, with a behavioral-cloning baseline.
//!
//! Observations are flattened per frame in field-name order, normalized per
//! dimension, and stacked over a window of `T_o` frames. The network predicts
//! `T_p` future actions; a controller executes the first `T_a` of them.

mod checkpoint;
mod data;
mod model;
pub mod nn;
mod sample;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{PolicyCheckpoint, Provenance, CHECKPOINT_VERSION};
pub use data::{
    action_chunk, build_samples, field_mask, fit_normalizer, flatten_episodes, layouts, obs_window, FieldLayout, FlatEpisode,
    Layout, Normalizer, RangeNormalizer,
};
pub use model::{
    timestep_embedding, Architecture, Batch, DenoiserSpec, EncoderKind, EncoderSpec, Geometry, Network, PolicyKind,
};
pub use sample::{ddim_loop, SamplerConfig};
pub use schedule::{
    forward_noise, make_schedule, predict_x0, NoiseSchedule, ScheduleSpec, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN,
    DEFAULT_T,
};
pub use train::{bc_train, finetune, train, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("bad schedule range: {0}")]
    BadRange(String),
    #[error("bad timestep: {0}")]
    BadTimestep(String),
    #[error("bad sampler config: {0}")]
    BadSamplerConfig(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    #[serde(rename = "T_o")]
    pub t_o: usize,
    #[serde(rename = "T_p")]
    pub t_p: usize,
    #[serde(rename = "T_a")]
    pub t_a: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig { t_o: 2, t_p: 16, t_a: 8 }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.t_o == 0 || self.t_a == 0 || self.t_a > self.t_p {
            return Err(PolicyError::InvalidSpec(format!(
                "need T_o >= 1 and 1 <= T_a <= T_p, got T_o={} T_p={} T_a={}",
                self.t_o, self.t_p, self.t_a
            )));
        }
        Ok(())
    }
}
