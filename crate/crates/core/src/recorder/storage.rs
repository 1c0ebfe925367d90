//! On-disk episode layout:
//!
//! ```text
//! <dir>/meta.json          session metadata, stream statistics, drop counters
//! <dir>/raw/<topic>.jsonl  captured unified frames, one per line
//! <dir>/aligned.jsonl      aligned ticks, one per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    AlignedEpisode, AlignedTick, FrequencyReport, RawRecording, RecorderError, SessionMeta, StreamRole,
    StreamSpec,
};
use crate::bus::Topic;
use crate::translate::{decode_json, encode_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub topic: Topic,
    pub role: StreamRole,
    pub nominal_hz: f64,
    pub rate_tolerance_frac: f64,
    pub max_period_std_frac: f64,
    pub n_frames: usize,
    pub mean_hz: f64,
    pub period_std_ns: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetaFile {
    pub task: String,
    pub operator: String,
    pub seed: u64,
    pub view_id: String,
    pub align_hz: f64,
    pub streams: Vec<StreamEntry>,
    pub drops: BTreeMap<Topic, u64>,
}

impl EpisodeMetaFile {
    pub fn session_meta(&self) -> SessionMeta {
        SessionMeta {
            task: self.task.clone(),
            operator: self.operator.clone(),
            seed: self.seed,
            view_id: self.view_id.clone(),
        }
    }

    pub fn stream_specs(&self) -> Vec<StreamSpec> {
        self.streams
            .iter()
            .map(|s| StreamSpec {
                topic: s.topic.clone(),
                nominal_hz: s.nominal_hz,
                role: s.role,
                rate_tolerance_frac: s.rate_tolerance_frac,
                max_period_std_frac: s.max_period_std_frac,
            })
            .collect()
    }

    pub fn read(dir: &Path) -> Result<Self, RecorderError> {
        let path = dir.join("meta.json");
        let bytes = fs::read(&path).map_err(|e| missing_or_io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| RecorderError::SchemaMismatch(format!("{}: {e}", path.display())))
    }
}

fn missing_or_io(path: &Path, e: std::io::Error) -> RecorderError {
    if e.kind() == std::io::ErrorKind::NotFound {
        RecorderError::SchemaMismatch(format!("missing {}", path.display()))
    } else {
        RecorderError::Io(e)
    }
}

fn raw_path(dir: &Path, topic: &Topic) -> PathBuf {
    let mut p = dir.join("raw");
    for seg in topic.segments() {
        p.push(seg);
    }
    p.set_extension("jsonl");
    p
}

/// Write the raw capture, its frequency statistics and the aligned episode.
pub fn save_episode(
    dir: &Path,
    rec: &RawRecording,
    report: &FrequencyReport,
    ep: &AlignedEpisode,
) -> Result<(), RecorderError> {
    fs::create_dir_all(dir)?;
    let streams = report
        .streams
        .iter()
        .map(|s| StreamEntry {
            topic: s.topic.clone(),
            role: s.role,
            nominal_hz: s.nominal_hz,
            rate_tolerance_frac: s.rate_tolerance_frac,
            max_period_std_frac: s.max_period_std_frac,
            n_frames: s.n_frames,
            mean_hz: s.mean_hz,
            period_std_ns: s.period_std_ns,
            pass: s.pass,
        })
        .collect();
    let meta = EpisodeMetaFile {
        task: ep.meta.task.clone(),
        operator: ep.meta.operator.clone(),
        seed: ep.meta.seed,
        view_id: ep.meta.view_id.clone(),
        align_hz: ep.align_hz,
        streams,
        drops: rec.drops.clone(),
    };
    let mut meta_bytes = serde_json::to_vec_pretty(&meta).map_err(|e| RecorderError::SchemaMismatch(e.to_string()))?;
    meta_bytes.push(b'\n');
    fs::write(dir.join("meta.json"), meta_bytes)?;

    for (topic, frames) in &rec.streams {
        let path = raw_path(dir, topic);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for f in frames {
            let line = encode_json(f).map_err(|e| RecorderError::BadFrame {
                topic: topic.to_string(),
                message: e.to_string(),
            })?;
            w.write_all(&line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    let mut w = BufWriter::new(fs::File::create(dir.join("aligned.jsonl"))?);
    for tick in &ep.ticks {
        for fv in tick.obs.values().chain(tick.action.values()) {
            if fv.as_f32().is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(RecorderError::SchemaMismatch("non-finite value in aligned tick".into()));
            }
        }
        serde_json::to_writer(&mut w, tick).map_err(|e| RecorderError::SchemaMismatch(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_episode(dir: &Path) -> Result<AlignedEpisode, RecorderError> {
    let meta = EpisodeMetaFile::read(dir)?;
    let path = dir.join("aligned.jsonl");
    let file = fs::File::open(&path).map_err(|e| missing_or_io(&path, e))?;
    let mut ticks = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tick: AlignedTick = serde_json::from_str(&line).map_err(|e| {
            RecorderError::SchemaMismatch(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        ticks.push(tick);
    }
    Ok(AlignedEpisode { meta: meta.session_meta(), align_hz: meta.align_hz, ticks })
}

/// Load the raw capture and stream specs, e.g. to re-align with other parameters.
pub fn load_recording(dir: &Path) -> Result<(RawRecording, Vec<StreamSpec>), RecorderError> {
    let meta = EpisodeMetaFile::read(dir)?;
    let mut rec = RawRecording::new(meta.session_meta());
    rec.drops = meta.drops.clone();
    for entry in &meta.streams {
        let path = raw_path(dir, &entry.topic);
        let text = fs::read_to_string(&path).map_err(|e| missing_or_io(&path, e))?;
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f = decode_json(line.as_bytes()).map_err(|e| {
                RecorderError::SchemaMismatch(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            frames.push(f);
        }
        rec.insert_stream(entry.topic.clone(), frames);
    }
    Ok((rec, meta.stream_specs()))
}
