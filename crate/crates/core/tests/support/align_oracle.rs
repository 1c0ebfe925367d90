//! Randomized multi-stream timelines and a brute-force reference aligner.
//!
//! The reference scans every frame for every tick and tries every run of
//! ticks, so it shares no search code with the library aligner.

use std::collections::BTreeMap;

use coinbot::bus::Topic;
use coinbot::recorder::{AlignedEpisode, AlignedTick, RawRecording, SessionMeta, StreamRole, StreamSpec};
use coinbot::translate::{FieldValue, Fields, UnifiedFrame};
use rand::Rng;

pub struct Timeline {
    pub rec: RawRecording,
    pub specs: Vec<StreamSpec>,
    pub align_hz: f64,
}

/// One to three sensor streams and usually a command stream, rates in
/// 10..=200 Hz, with start offsets, timing jitter, random drops, occasional
/// outages and duplicated timestamps.
pub fn random_timeline(rng: &mut impl Rng) -> Timeline {
    let n_sensor = rng.random_range(1..=3);
    let has_cmd = rng.random_bool(0.8);
    let mut rec = RawRecording::new(SessionMeta::default());
    let mut specs = Vec::new();
    let duration = rng.random_range(300_000_000i64..2_000_000_000);
    for i in 0..n_sensor + has_cmd as usize {
        let cmd = i == n_sensor;
        let hz = rng.random_range(10..=200) as f64;
        let (topic, role) = if cmd {
            (Topic::new("cmd/leader").unwrap(), StreamRole::Command)
        } else {
            let role = if i == 0 { StreamRole::State } else { StreamRole::Observation };
            (Topic::new(&format!("sensor/s{i}")).unwrap(), role)
        };
        let period = 1e9 / hz;
        let start = rng.random_range(0..150_000_000i64);
        let jitter = [0.0, 0.02, 0.1, 0.4][rng.random_range(0..4)];
        let drop_p = [0.0, 0.0, 0.05, 0.3][rng.random_range(0..4)];
        // an outage long enough to split the aligned run
        let outage = rng.random_bool(0.2).then(|| {
            let a = rng.random_range(0..duration);
            (a, a + rng.random_range(100_000_000..400_000_000))
        });
        let mut frames = Vec::new();
        let mut seq = 0u64;
        let mut j = 0i64;
        loop {
            let nominal = start as f64 + j as f64 * period;
            if nominal > (start + duration) as f64 {
                break;
            }
            j += 1;
            let t = (nominal + jitter * period * rng.random_range(-1.0..1.0)).round() as i64;
            if rng.random_bool(drop_p) || outage.is_some_and(|(a, b)| (a..b).contains(&t)) {
                continue;
            }
            let copies = if rng.random_bool(0.03) { 2 } else { 1 };
            for _ in 0..copies {
                let mut f = Fields::new();
                f.insert(format!("f{i}"), FieldValue::scalar(seq as f32));
                frames.push(UnifiedFrame::new(topic.clone(), format!("src{i}"), seq, t.max(0), f));
                seq += 1;
            }
        }
        if frames.is_empty() {
            let mut f = Fields::new();
            f.insert(format!("f{i}"), FieldValue::scalar(0.0));
            frames.push(UnifiedFrame::new(topic.clone(), format!("src{i}"), 0, start, f));
        }
        rec.insert_stream(topic.clone(), frames);
        specs.push(StreamSpec::new(topic, hz, role));
    }
    let min_sensor = specs.iter().filter(|s| s.role != StreamRole::Command).map(|s| s.nominal_hz).fold(f64::MAX, f64::min);
    let align_hz = if rng.random_bool(0.5) { 10.0f64.min(min_sensor) } else { rng.random_range(1..=min_sensor as u32) as f64 };
    Timeline { rec, specs, align_hz }
}

fn key(f: &UnifiedFrame) -> (i64, u64, &str) {
    (f.t_ns, f.seq, f.source_id.as_str())
}

/// Sensor: latest frame at or before `tick`. Command: earliest frame after it.
/// Ties on time go to the highest sequence number.
fn reference_pick(frames: &[UnifiedFrame], tick: i64, sensor: bool) -> Option<&UnifiedFrame> {
    let mut best: Option<&UnifiedFrame> = None;
    for f in frames {
        let eligible = if sensor { f.t_ns <= tick } else { f.t_ns > tick };
        if !eligible {
            continue;
        }
        best = match best {
            None => Some(f),
            Some(b) if sensor && key(f) > key(b) => Some(f),
            Some(b) if !sensor && (f.t_ns < b.t_ns || (f.t_ns == b.t_ns && key(f) > key(b))) => Some(f),
            keep => keep,
        };
    }
    best
}

/// `None` where the library reports an empty overlap.
pub fn reference_align(rec: &RawRecording, specs: &[StreamSpec], align_hz: f64) -> Option<AlignedEpisode> {
    let streams: Vec<(&StreamSpec, &[UnifiedFrame])> =
        specs.iter().map(|s| (s, rec.streams.get(&s.topic).map(Vec::as_slice).unwrap_or(&[]))).collect();
    let t0 = streams.iter().map(|(_, fs)| fs.iter().map(|f| f.t_ns).min().unwrap()).max().unwrap();
    let t_end = streams.iter().map(|(_, fs)| fs.iter().map(|f| f.t_ns).max().unwrap()).min().unwrap();
    let step = (1e9 / align_hz).round() as i64;

    let mut ticks: Vec<(i64, Option<Vec<&UnifiedFrame>>)> = Vec::new();
    let mut t = t0;
    while t <= t_end {
        let picks: Option<Vec<&UnifiedFrame>> = streams
            .iter()
            .map(|(s, fs)| {
                let f = reference_pick(fs, t, s.role != StreamRole::Command)?;
                let limit = (2.0 * 1e9 / s.nominal_hz).round() as i64;
                ((t - f.t_ns).abs() <= limit).then_some(f)
            })
            .collect();
        ticks.push((t, picks));
        t += step;
    }

    let (mut best_start, mut best_len) = (0, 0);
    for s in 0..ticks.len() {
        let len = ticks[s..].iter().take_while(|(_, p)| p.is_some()).count();
        if len > best_len {
            (best_start, best_len) = (s, len);
        }
    }
    if best_len == 0 {
        return None;
    }
    let out = ticks[best_start..best_start + best_len]
        .iter()
        .map(|(t, picks)| {
            let mut obs = Fields::new();
            let mut action = Fields::new();
            let mut staleness_ns = BTreeMap::new();
            for ((s, _), f) in streams.iter().zip(picks.as_ref().unwrap()) {
                staleness_ns.insert(s.topic.clone(), (t - f.t_ns).abs());
                let target = if s.role == StreamRole::Command { &mut action } else { &mut obs };
                target.extend(f.fields.clone());
            }
            AlignedTick { t_ns: *t, obs, action, staleness_ns }
        })
        .collect();
    Some(AlignedEpisode { meta: rec.meta.clone(), align_hz, ticks: out })
}
