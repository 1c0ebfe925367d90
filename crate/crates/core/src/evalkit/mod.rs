//! Offline and closed-loop evaluation of policies.
//!
//! Everything here talks to a policy through [`PolicyEndpoint`], so an
//! in-process checkpoint, a scripted expert and a remote bridge server are
//! scored by the same code.

mod coverage;
mod dump;
mod endpoint;
mod mse;
mod report;
mod rollout;

use thiserror::Error;

use crate::policy::PolicyError;

pub use coverage::{mode_coverage, sample_initial_chunks, ModeCoverage, Mode};
pub use dump::{dump_trajectories, read_csv, write_csv, write_svg, DumpFormat, CSV_HEADER};
pub use endpoint::{
    action_row, query_seed, CheckpointEndpoint, EndpointSpec, ExpertEndpoint, PolicyEndpoint, Query,
    ReplayEndpoint, ZeroEndpoint, ACTION_DIM,
};
pub use mse::{action_mse, MseReport};
pub use report::{EvalReport, RolloutSummary};
pub use rollout::{rollout, EpisodeResult, Rollout, RolloutConfig, TrajPoint, Trajectory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("endpoint unavailable: {reason}")]
    EndpointUnavailable {
        reason: String,
        /// Episodes finished before the endpoint failed.
        partial: Option<Box<Rollout>>,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn unavailable(reason: impl Into<String>) -> Self {
        EvalError::EndpointUnavailable { reason: reason.into(), partial: None }
    }
}
