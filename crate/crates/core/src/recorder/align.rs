use std::collections::BTreeMap;

use super::{align_step_ns, AlignedEpisode, AlignedTick, RawRecording, RecorderError, StreamSpec};
use crate::bus::Topic;
use crate::translate::{Fields, UnifiedFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub align_hz: f64,
    /// Per-stream staleness limit; streams not listed get twice their nominal period.
    pub staleness_max_ns: BTreeMap<Topic, i64>,
}

impl AlignConfig {
    pub fn new(align_hz: f64) -> Self {
        AlignConfig { align_hz, staleness_max_ns: BTreeMap::new() }
    }

    pub fn staleness_limit(&self, spec: &StreamSpec) -> i64 {
        self.staleness_max_ns
            .get(&spec.topic)
            .copied()
            .unwrap_or_else(|| (2.0 * spec.nominal_period_ns()).round() as i64)
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::new(super::DEFAULT_ALIGN_HZ)
    }
}

/// Index of the frame chosen for `tick`, or `None` if the stream has none.
///
/// Sensor streams take the latest frame at or before the tick; the command
/// stream takes the earliest frame strictly after it. Equal timestamps resolve
/// to the highest sequence number.
fn choose(frames: &[UnifiedFrame], tick: i64, sensor: bool) -> Option<usize> {
    if sensor {
        frames.partition_point(|f| f.t_ns <= tick).checked_sub(1)
    } else {
        let first_after = frames.partition_point(|f| f.t_ns <= tick);
        let t = frames.get(first_after)?.t_ns;
        Some(frames.partition_point(|f| f.t_ns <= t) - 1)
    }
}

/// Resample a recording onto a fixed tick grid.
///
/// Ticks start at the latest first-frame time over all streams and stop at the
/// earliest last-frame time. A tick is usable when every stream has a frame
/// within its staleness limit (and the command stream has a look-ahead frame);
/// the episode is the longest run of consecutive usable ticks, earliest first on ties.
pub fn align(rec: &RawRecording, specs: &[StreamSpec], cfg: &AlignConfig) -> Result<AlignedEpisode, RecorderError> {
    for s in specs {
        s.validate()?;
    }
    if specs.iter().filter(|s| !s.role.is_sensor()).count() > 1 {
        return Err(RecorderError::InvalidSpec("at most one command stream".into()));
    }
    if !(cfg.align_hz > 0.0 && cfg.align_hz.is_finite()) {
        return Err(RecorderError::InvalidSpec(format!("align_hz {} must be > 0", cfg.align_hz)));
    }
    let min_hz = specs
        .iter()
        .filter(|s| s.role.is_sensor())
        .map(|s| s.nominal_hz)
        .fold(f64::INFINITY, f64::min);
    if !min_hz.is_finite() {
        return Err(RecorderError::InvalidSpec("no observation or state stream".into()));
    }
    if cfg.align_hz > min_hz {
        return Err(RecorderError::AlignRateTooHigh { align_hz: cfg.align_hz, min_hz });
    }

    let mut streams: Vec<(&StreamSpec, &[UnifiedFrame])> = Vec::with_capacity(specs.len());
    for s in specs {
        let frames = rec.streams.get(&s.topic).map(Vec::as_slice).unwrap_or(&[]);
        if frames.is_empty() {
            return Err(RecorderError::NoData(s.topic.to_string()));
        }
        streams.push((s, frames));
    }
    let t0 = streams.iter().map(|(_, f)| f[0].t_ns).max().unwrap_or(0);
    let t_end = streams.iter().map(|(_, f)| f[f.len() - 1].t_ns).min().unwrap_or(-1);
    if t0 > t_end {
        return Err(RecorderError::EmptyOverlap);
    }
    let step = align_step_ns(cfg.align_hz);
    let n_ticks = ((t_end - t0) / step + 1) as usize;
    let limits: Vec<i64> = streams.iter().map(|(s, _)| cfg.staleness_limit(s)).collect();

    // chosen frame index per tick and stream, None when the tick is unusable
    let picks: Vec<Option<Vec<usize>>> = (0..n_ticks)
        .map(|k| {
            let tick = t0 + k as i64 * step;
            streams
                .iter()
                .zip(&limits)
                .map(|((s, frames), &limit)| {
                    let i = choose(frames, tick, s.role.is_sensor())?;
                    let gap = (tick - frames[i].t_ns).abs();
                    (gap <= limit).then_some(i)
                })
                .collect()
        })
        .collect();

    let (mut best_start, mut best_len, mut run_start) = (0, 0, 0);
    for k in 0..=n_ticks {
        if k < n_ticks && picks[k].is_some() {
            continue;
        }
        if k - run_start > best_len {
            best_start = run_start;
            best_len = k - run_start;
        }
        run_start = k + 1;
    }
    if best_len == 0 {
        return Err(RecorderError::EmptyOverlap);
    }

    let mut ticks = Vec::with_capacity(best_len);
    for (k, pick) in picks.iter().enumerate().skip(best_start).take(best_len) {
        let tick = t0 + k as i64 * step;
        let pick = pick.as_ref().expect("run contains only usable ticks");
        let mut obs = Fields::new();
        let mut action = Fields::new();
        let mut staleness_ns = BTreeMap::new();
        for ((s, frames), &i) in streams.iter().zip(pick) {
            let f = &frames[i];
            staleness_ns.insert(s.topic.clone(), (tick - f.t_ns).abs());
            let target = if s.role.is_sensor() { &mut obs } else { &mut action };
            for (name, v) in &f.fields {
                if target.insert(name.clone(), v.clone()).is_some() {
                    return Err(RecorderError::FieldCollision(name.clone()));
                }
            }
        }
        ticks.push(AlignedTick { t_ns: tick, obs, action, staleness_ns });
    }
    Ok(AlignedEpisode { meta: rec.meta.clone(), align_hz: cfg.align_hz, ticks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recorder::{SessionMeta, StreamRole};
    use crate::translate::FieldValue;

    fn frames(topic: &Topic, field: &str, times: &[i64]) -> Vec<UnifiedFrame> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut f = Fields::new();
                f.insert(field.into(), FieldValue::scalar(t as f32));
                UnifiedFrame::new(topic.clone(), "s", i as u64, t, f)
            })
            .collect()
    }

    fn periodic(hz: f64, until_ns: i64) -> Vec<i64> {
        (0..).map(|j| (j as f64 * 1e9 / hz).round() as i64).take_while(|&t| t < until_ns).collect()
    }

    fn native_rate_setup() -> (RawRecording, Vec<StreamSpec>) {
        let state = Topic::new("state/follower").unwrap();
        let cmd = Topic::new("cmd/leader").unwrap();
        let obs = Topic::new("obs/scene").unwrap();
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(state.clone(), frames(&state, "q", &periodic(60.0, 1_000_000_000)));
        rec.insert_stream(cmd.clone(), frames(&cmd, "u", &periodic(160.0, 1_000_000_000)));
        rec.insert_stream(obs.clone(), frames(&obs, "img", &periodic(30.0, 1_000_000_000)));
        let specs = vec![
            StreamSpec::new(state, 60.0, StreamRole::State),
            StreamSpec::new(cmd, 160.0, StreamRole::Command),
            StreamSpec::new(obs, 30.0, StreamRole::Observation),
        ];
        (rec, specs)
    }

    #[test]
    fn mixed_rates_to_ten_hz() {
        let (rec, specs) = native_rate_setup();
        let ep = align(&rec, &specs, &AlignConfig::new(10.0)).unwrap();
        assert_eq!(ep.ticks.len(), 10);
        assert_eq!(ep.ticks[0].t_ns, 0);
        assert_eq!(ep.ticks[1].t_ns, 100_000_000);
        let t1 = &ep.ticks[1];
        // the 30 Hz stream's fourth frame lands exactly on 100 ms
        assert_eq!(t1.obs["img"], FieldValue::scalar(100_000_000.0));
        assert_eq!(t1.staleness_ns[&Topic::new("obs/scene").unwrap()], 0);
        // action is the first command strictly after the tick: 106.25 ms
        assert_eq!(t1.action["u"], FieldValue::scalar(106_250_000.0));
        assert_eq!(t1.staleness_ns[&Topic::new("cmd/leader").unwrap()], 6_250_000);
    }

    #[test]
    fn align_rate_above_slowest_sensor() {
        let (rec, specs) = native_rate_setup();
        assert!(matches!(
            align(&rec, &specs, &AlignConfig::new(40.0)),
            Err(RecorderError::AlignRateTooHigh { min_hz, .. }) if min_hz == 30.0
        ));
    }

    #[test]
    fn single_stream_at_nominal_rate_has_zero_staleness() {
        let topic = Topic::new("obs/a").unwrap();
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(topic.clone(), frames(&topic, "x", &periodic(20.0, 2_000_000_000)));
        let specs = [StreamSpec::new(topic.clone(), 20.0, StreamRole::Observation)];
        let ep = align(&rec, &specs, &AlignConfig::new(20.0)).unwrap();
        assert_eq!(ep.ticks.len(), 40);
        assert!(ep.ticks.iter().all(|t| t.staleness_ns[&topic] == 0 && t.action.is_empty()));
    }

    #[test]
    fn disjoint_streams_have_no_overlap() {
        let a = Topic::new("obs/a").unwrap();
        let b = Topic::new("obs/b").unwrap();
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(a.clone(), frames(&a, "x", &[0, 100, 200]));
        rec.insert_stream(b.clone(), frames(&b, "y", &[1000, 1100]));
        let specs = [
            StreamSpec::new(a, 10.0, StreamRole::Observation),
            StreamSpec::new(b, 10.0, StreamRole::Observation),
        ];
        assert!(matches!(align(&rec, &specs, &AlignConfig::new(10.0)), Err(RecorderError::EmptyOverlap)));
    }

    #[test]
    fn gap_splits_episode_and_longest_run_wins() {
        let a = Topic::new("obs/a").unwrap();
        let mut times: Vec<i64> = (0..5).map(|j| j * 100_000_000).collect();
        times.extend((12..20).map(|j| j * 100_000_000));
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(a.clone(), frames(&a, "x", &times));
        let specs = [StreamSpec::new(a.clone(), 10.0, StreamRole::Observation)];
        let ep = align(&rec, &specs, &AlignConfig::new(10.0)).unwrap();
        assert_eq!(ep.ticks.len(), 8);
        assert_eq!(ep.ticks[0].t_ns, 1_200_000_000);
        // a generous limit bridges the gap
        let mut cfg = AlignConfig::new(10.0);
        cfg.staleness_max_ns.insert(a, 1_000_000_000);
        assert_eq!(align(&rec, &specs, &cfg).unwrap().ticks.len(), 20);
    }

    #[test]
    fn equal_timestamps_resolve_to_highest_seq() {
        let a = Topic::new("obs/a").unwrap();
        let mut fs = frames(&a, "x", &[0, 100_000_000, 100_000_000, 200_000_000]);
        fs[2].fields.insert("x".into(), FieldValue::scalar(-1.0));
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(a.clone(), fs.clone());
        let specs = [StreamSpec::new(a.clone(), 10.0, StreamRole::Observation)];
        let ep = align(&rec, &specs, &AlignConfig::new(10.0)).unwrap();
        assert_eq!(ep.ticks[1].obs["x"], FieldValue::scalar(-1.0));
        // arrival order does not matter
        fs.swap(1, 2);
        fs.reverse();
        rec.insert_stream(a, fs);
        assert_eq!(align(&rec, &specs, &AlignConfig::new(10.0)).unwrap(), ep);
    }

    #[test]
    fn colliding_field_names() {
        let a = Topic::new("obs/a").unwrap();
        let b = Topic::new("obs/b").unwrap();
        let mut rec = RawRecording::new(SessionMeta::default());
        rec.insert_stream(a.clone(), frames(&a, "x", &[0, 100_000_000]));
        rec.insert_stream(b.clone(), frames(&b, "x", &[0, 100_000_000]));
        let specs = [
            StreamSpec::new(a, 10.0, StreamRole::Observation),
            StreamSpec::new(b, 10.0, StreamRole::State),
        ];
        assert!(matches!(align(&rec, &specs, &AlignConfig::new(10.0)), Err(RecorderError::FieldCollision(_))));
    }
}
