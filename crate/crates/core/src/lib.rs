//! Desk-scale robot-learning pipeline.
//!
//! Simulated devices publish native messages on a [`bus`]; [`translate`]
//! turns them into unified frames; [`recorder`] captures, checks and aligns
//! them into episodes; [`policy`] trains a diffusion policy (and a regression
//! baseline) on those episodes; [`evalkit`] scores policies offline and in
//! closed loop against [`simworld`]; [`bridge`] serves policies over TCP.

pub mod bridge;
pub mod bus;
pub mod collect;
pub mod evalkit;
pub mod policy;
pub mod recorder;
pub mod simworld;
pub mod translate;
pub mod wire;
