use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use super::{RawRecording, RecorderError, SessionMeta, StreamSpec};
use crate::bus::{Bus, RawMessage, Subscription, Topic};
use crate::translate::{decode_json, UnifiedFrame};

/// Live capture of a set of unified streams.
pub struct Recorder {
    meta: SessionMeta,
    subs: Vec<(StreamSpec, Subscription)>,
    frames: BTreeMap<Topic, Vec<UnifiedFrame>>,
    seen: HashSet<(Topic, String, u64)>,
    duplicates: u64,
}

impl Recorder {
    /// Subscribe to every stream. Frames published before this call are not captured.
    pub fn start(bus: &Bus, specs: &[StreamSpec], meta: SessionMeta) -> Result<Self, RecorderError> {
        let mut subs = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            subs.push((spec.clone(), bus.subscribe(spec.topic.as_str())?));
        }
        let frames = specs.iter().map(|s| (s.topic.clone(), Vec::new())).collect();
        Ok(Recorder { meta, subs, frames, seen: HashSet::new(), duplicates: 0 })
    }

    fn store(&mut self, msg: RawMessage) -> Result<(), RecorderError> {
        let key = (msg.topic.clone(), msg.source_id.clone(), msg.seq);
        if !self.seen.insert(key) {
            self.duplicates += 1;
            return Ok(());
        }
        let frame = decode_json(&msg.payload).map_err(|e| RecorderError::BadFrame {
            topic: msg.topic.to_string(),
            message: e.to_string(),
        })?;
        self.frames.entry(msg.topic).or_default().push(frame);
        Ok(())
    }

    /// Move everything queued so far into the recording.
    pub fn poll(&mut self) -> Result<usize, RecorderError> {
        let mut batch = Vec::new();
        for (_, sub) in &self.subs {
            batch.extend(sub.drain_now());
        }
        let n = batch.len();
        for m in batch {
            self.store(m)?;
        }
        Ok(n)
    }

    /// Deliveries discarded as duplicates of an already stored `(topic, source, seq)`.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn finish(mut self) -> Result<RawRecording, RecorderError> {
        self.poll()?;
        let mut rec = RawRecording::new(self.meta);
        for (spec, sub) in &self.subs {
            let dropped = sub.dropped().get(&spec.topic).copied().unwrap_or(0);
            rec.drops.insert(spec.topic.clone(), dropped);
        }
        for (spec, _) in &self.subs {
            let frames = self.frames.remove(&spec.topic).unwrap_or_default();
            if frames.is_empty() {
                return Err(RecorderError::NoData(spec.topic.to_string()));
            }
            rec.insert_stream(spec.topic.clone(), frames);
        }
        Ok(rec)
    }
}

pub enum StopCondition {
    /// Stop at a wall-clock instant.
    Deadline(Instant),
    /// Stop once any message arrives on this topic, or after `timeout`.
    EndMarker { topic: Topic, timeout: Duration },
}

/// Capture until the stop condition holds.
pub fn record(
    bus: &Bus,
    specs: &[StreamSpec],
    meta: SessionMeta,
    stop: StopCondition,
) -> Result<RawRecording, RecorderError> {
    let mut rec = Recorder::start(bus, specs, meta)?;
    match stop {
        StopCondition::Deadline(deadline) => {
            while Instant::now() < deadline && !bus.is_closed() {
                rec.poll()?;
                std::thread::sleep(Duration::from_millis(2).min(deadline.saturating_duration_since(Instant::now())));
            }
        }
        StopCondition::EndMarker { topic, timeout } => {
            let marker = bus.subscribe(topic.as_str())?;
            let deadline = Instant::now() + timeout;
            loop {
                rec.poll()?;
                if marker.recv_timeout(Duration::from_millis(2)).is_some() {
                    break;
                }
                if Instant::now() >= deadline || marker.is_closed() {
                    break;
                }
            }
        }
    }
    rec.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recorder::StreamRole;
    use crate::translate::{encode_json, FieldValue, Fields};

    fn frame_payload(topic: &Topic, seq: u64, t_ns: i64) -> Vec<u8> {
        let mut fields = Fields::new();
        fields.insert("x".into(), FieldValue::scalar(seq as f32));
        encode_json(&UnifiedFrame::new(topic.clone(), "src", seq, t_ns, fields)).unwrap()
    }

    #[test]
    fn deduplicates_by_topic_source_seq() {
        let bus = Bus::new();
        let topic = Topic::new("obs/a").unwrap();
        let spec = StreamSpec::new(topic.clone(), 30.0, StreamRole::Observation);
        let mut rec = Recorder::start(&bus, &[spec], SessionMeta::default()).unwrap();
        for seq in [0u64, 1, 1, 2] {
            let msg = RawMessage {
                topic: topic.clone(),
                source_id: "src".into(),
                seq,
                t_ns: seq as i64 * 10,
                payload: frame_payload(&topic, seq, seq as i64 * 10),
            };
            bus.deliver(msg).unwrap();
        }
        rec.poll().unwrap();
        assert_eq!(rec.duplicates(), 1);
        let out = rec.finish().unwrap();
        assert_eq!(out.streams[&topic].len(), 3);
    }

    #[test]
    fn silent_stream_is_no_data() {
        let bus = Bus::new();
        let a = StreamSpec::new(Topic::new("obs/a").unwrap(), 30.0, StreamRole::Observation);
        let b = StreamSpec::new(Topic::new("obs/b").unwrap(), 30.0, StreamRole::Observation);
        let rec = Recorder::start(&bus, &[a.clone(), b], SessionMeta::default()).unwrap();
        bus.publish(&a.topic, "src", 0, frame_payload(&a.topic, 0, 0)).unwrap();
        assert!(matches!(rec.finish(), Err(RecorderError::NoData(t)) if t == "obs/b"));
    }

    #[test]
    fn record_until_end_marker() {
        let bus = Bus::new();
        let topic = Topic::new("obs/a").unwrap();
        let spec = StreamSpec::new(topic.clone(), 30.0, StreamRole::Observation);
        let end = Topic::new("ctl/end").unwrap();
        let bus2 = bus.clone();
        let (t2, e2) = (topic.clone(), end.clone());
        let producer = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            for i in 0..30 {
                bus2.publish(&t2, "src", i * 33_333_333, frame_payload(&t2, i as u64, i * 33_333_333)).unwrap();
            }
            bus2.publish(&e2, "ctl", 0, vec![]).unwrap();
        });
        let meta = SessionMeta { operator: "alice".into(), ..Default::default() };
        let out = record(
            &bus,
            &[spec],
            meta,
            StopCondition::EndMarker { topic: end, timeout: Duration::from_secs(10) },
        )
        .unwrap();
        producer.join().unwrap();
        assert_eq!(out.streams[&topic].len(), 30);
        assert_eq!(out.meta.operator, "alice");
        assert_eq!(out.drops[&topic], 0);
    }
}
