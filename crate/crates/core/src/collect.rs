//! Demonstration collection: simulated session, bus, translation, capture,
//! frequency checks and alignment, all in one process.

use std::sync::Arc;

use thiserror::Error;

use crate::bus::Bus;
use crate::recorder::{
    align, validate_frequencies, AlignConfig, AlignedEpisode, FrequencyReport, RawRecording, Recorder,
    RecorderError,
};
use crate::simworld::{SessionConfig, SimError, SimSession, WorldState};
use crate::translate::{TranslateError, TranslationRunner, TranslationStats};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

#[derive(Debug, Clone)]
pub struct CollectedEpisode {
    pub recording: RawRecording,
    pub report: FrequencyReport,
    pub episode: AlignedEpisode,
    /// Ground-truth world state at every control tick.
    pub states: Vec<WorldState>,
    pub translation: TranslationStats,
}

/// Run one expert session through the full capture path.
pub fn collect_episode(cfg: &SessionConfig, align_cfg: &AlignConfig) -> Result<CollectedEpisode, CollectError> {
    let bus = Bus::new();
    let topics = cfg.topics();
    let mut runner = TranslationRunner::new(Arc::new(cfg.translator()?), bus.clone(), &topics.native_pattern)?;
    let specs = cfg.stream_specs();
    let mut recorder = Recorder::start(&bus, &specs, cfg.meta())?;
    let mut session = SimSession::new(cfg.clone(), bus.clone())?;
    // drain after every control period so bounded queues never overflow
    while session.advance()? {
        runner.pump()?;
        recorder.poll()?;
    }
    runner.pump()?;
    let recording = recorder.finish()?;
    bus.close();
    let report = validate_frequencies(&recording, &specs)?;
    let episode = align(&recording, &specs, align_cfg)?;
    Ok(CollectedEpisode {
        recording,
        report,
        episode,
        states: session.states().to_vec(),
        translation: runner.stats(),
    })
}

/// `n` demonstrations with seeds `base.seed .. base.seed + n`.
pub fn collect_demos(base: &SessionConfig, n: usize, align_cfg: &AlignConfig) -> Result<Vec<CollectedEpisode>, CollectError> {
    (0..n as u64)
        .map(|i| collect_episode(&SessionConfig { seed: base.seed + i, ..base.clone() }, align_cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{eef_pose, expert_episode, observe, TaskKind, TaskSpec};

    #[test]
    fn one_second_session_aligns_to_ten_ticks() {
        let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::Sorting), 2);
        cfg.max_duration_ns = Some(1_000_000_000);
        let c = collect_episode(&cfg, &AlignConfig::new(10.0)).unwrap();
        let counts: Vec<usize> = c.report.streams.iter().map(|s| s.n_frames).collect();
        assert_eq!(counts, vec![60, 160, 30]);
        assert!(c.report.all_pass(), "{:?}", c.report);
        assert_eq!(c.episode.ticks.len(), 10);
        let specs = cfg.stream_specs();
        let cfg_align = AlignConfig::new(10.0);
        for tick in &c.episode.ticks {
            for spec in &specs {
                let st = tick.staleness_ns[&spec.topic];
                assert!(st >= 0 && st <= cfg_align.staleness_limit(spec));
            }
        }
        assert_eq!(c.translation.translated, 250);
    }

    #[test]
    fn aligned_pairs_match_ground_truth() {
        let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::PickPlace), 11);
        cfg.noise_sigma = 0.01;
        cfg.operator = "Ana".into();
        cfg.grid = true;
        let c = collect_episode(&cfg, &AlignConfig::new(10.0)).unwrap();
        assert_eq!(c.recording.meta.operator, "Ana");
        assert_eq!(c.recording.meta.view_id, "A");
        let (states, actions, _) = expert_episode(&cfg.task, cfg.seed, cfg.noise_sigma);
        assert_eq!(c.episode.ticks.len(), actions.len());
        for (k, tick) in c.episode.ticks.iter().enumerate() {
            assert_eq!(tick.obs["eef_pose"].as_f32().unwrap(), &eef_pose(&states[k]));
            assert_eq!(tick.action["delta_xy"].as_f32().unwrap(), &actions[k].delta_xy);
            assert_eq!(tick.action["gripper_cmd"].as_f32().unwrap(), &[actions[k].gripper_cmd]);
            assert_eq!(tick.obs["grid"].shape(), &[8, 8, 3]);
            assert_eq!(tick.obs, observe(&states[k], &cfg.view, true));
        }
        assert_eq!(c.states, states);
    }
}
