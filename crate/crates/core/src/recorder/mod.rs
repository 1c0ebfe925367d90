//! Capture of unified streams at their native rates, sampling-frequency
//! checks, timestamp alignment to a fixed tick rate, and episode storage.

mod align;
mod capture;
mod quality;
mod storage;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusError, Topic};
use crate::translate::{Fields, UnifiedFrame};

pub use align::{align, AlignConfig};
pub use capture::{record, Recorder, StopCondition};
pub use quality::validate_frequencies;
pub use storage::{load_episode, load_recording, save_episode, EpisodeMetaFile, StreamEntry};

pub const DEFAULT_RATE_TOLERANCE_FRAC: f64 = 0.05;
pub const DEFAULT_MAX_PERIOD_STD_FRAC: f64 = 0.25;
pub const DEFAULT_ALIGN_HZ: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("stream {0} produced no frames")]
    NoData(String),
    #[error("stream {topic} has {n} frames; at least 2 are needed")]
    InsufficientFrames { topic: String, n: usize },
    #[error("align rate {align_hz} Hz exceeds the slowest sensor stream ({min_hz} Hz)")]
    AlignRateTooHigh { align_hz: f64, min_hz: f64 },
    #[error("streams share no usable time window")]
    EmptyOverlap,
    #[error("field {0:?} is produced by more than one observation stream")]
    FieldCollision(String),
    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bad frame on {topic}: {message}")]
    BadFrame { topic: String, message: String },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamRole {
    Observation,
    State,
    Command,
}

impl StreamRole {
    /// Observation and state streams are sampled with zero-order hold.
    pub fn is_sensor(self) -> bool {
        !matches!(self, StreamRole::Command)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub topic: Topic,
    pub nominal_hz: f64,
    pub role: StreamRole,
    #[serde(default = "default_rate_tol")]
    pub rate_tolerance_frac: f64,
    #[serde(default = "default_std_frac")]
    pub max_period_std_frac: f64,
}

fn default_rate_tol() -> f64 {
    DEFAULT_RATE_TOLERANCE_FRAC
}

fn default_std_frac() -> f64 {
    DEFAULT_MAX_PERIOD_STD_FRAC
}

impl StreamSpec {
    pub fn new(topic: Topic, nominal_hz: f64, role: StreamRole) -> Self {
        StreamSpec {
            topic,
            nominal_hz,
            role,
            rate_tolerance_frac: DEFAULT_RATE_TOLERANCE_FRAC,
            max_period_std_frac: DEFAULT_MAX_PERIOD_STD_FRAC,
        }
    }

    pub fn nominal_period_ns(&self) -> f64 {
        1e9 / self.nominal_hz
    }

    pub fn validate(&self) -> Result<(), RecorderError> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !(self.nominal_hz > 0.0 && self.nominal_hz.is_finite()) {
            return Err(RecorderError::InvalidSpec(format!("{}: nominal_hz must be > 0", self.topic)));
        }
        if !frac_ok(self.rate_tolerance_frac) || !frac_ok(self.max_period_std_frac) {
            return Err(RecorderError::InvalidSpec(format!("{}: fractions must lie in (0, 1]", self.topic)));
        }
        Ok(())
    }
}

/// Session metadata carried from capture to every derived artifact.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionMeta {
    pub task: String,
    pub operator: String,
    pub seed: u64,
    pub view_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub meta: SessionMeta,
    /// Frames per topic, sorted by `(t_ns, seq, source_id)`.
    pub streams: BTreeMap<Topic, Vec<UnifiedFrame>>,
    pub drops: BTreeMap<Topic, u64>,
}

impl RawRecording {
    pub fn new(meta: SessionMeta) -> Self {
        RawRecording { meta, streams: BTreeMap::new(), drops: BTreeMap::new() }
    }

    /// Insert frames for a topic, restoring the canonical order.
    pub fn insert_stream(&mut self, topic: Topic, mut frames: Vec<UnifiedFrame>) {
        sort_frames(&mut frames);
        self.streams.insert(topic, frames);
    }
}

pub(crate) fn sort_frames(frames: &mut [UnifiedFrame]) {
    frames.sort_by(|a, b| (a.t_ns, a.seq, &a.source_id).cmp(&(b.t_ns, b.seq, &b.source_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub topic: Topic,
    pub role: StreamRole,
    pub nominal_hz: f64,
    pub rate_tolerance_frac: f64,
    pub max_period_std_frac: f64,
    pub n_frames: usize,
    pub mean_hz: f64,
    pub period_std_ns: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub streams: Vec<StreamStats>,
}

impl FrequencyReport {
    pub fn all_pass(&self) -> bool {
        self.streams.iter().all(|s| s.pass)
    }

    pub fn get(&self, topic: &Topic) -> Option<&StreamStats> {
        self.streams.iter().find(|s| &s.topic == topic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTick {
    pub t_ns: i64,
    pub obs: Fields,
    pub action: Fields,
    /// Tick time minus the chosen frame's time for sensor streams; time from
    /// the tick to the chosen (look-ahead) frame for the command stream.
    pub staleness_ns: BTreeMap<Topic, i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEpisode {
    pub meta: SessionMeta,
    pub align_hz: f64,
    pub ticks: Vec<AlignedTick>,
}

impl AlignedEpisode {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn step_ns(&self) -> i64 {
        align_step_ns(self.align_hz)
    }
}

pub fn align_step_ns(align_hz: f64) -> i64 {
    (1e9 / align_hz).round() as i64
}
