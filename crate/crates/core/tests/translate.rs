use std::sync::Arc;

use coinbot::bus::{Bus, RawMessage, Topic};
use coinbot::simworld::{run_session, SessionConfig, TaskKind, TaskSpec};
use coinbot::translate::{
    decode_json, encode_json, AdapterSpec, FieldRule, TranslateError, TranslationRunner, Translator,
};
use proptest::prelude::*;

fn topic(s: &str) -> Topic {
    Topic::new(s).unwrap()
}

fn raw(t: &str, payload: &str) -> RawMessage {
    RawMessage { topic: topic(t), source_id: "dev".into(), seq: 7, t_ns: 123, payload: payload.as_bytes().to_vec() }
}

#[test]
fn adapter_specs_load_from_toml_with_defaults() {
    let spec: AdapterSpec = toml::from_str(
        r#"
        native_schema_id = "arm.v2"
        input_topic = "native/arm"
        output_topic = "state/arm"
        [[rules]]
        source = "q_deg"
        target = "q"
        scale = 0.5
        [[rules]]
        source = "pose"
        target = "pose"
        shape = [2, 2]
        "#,
    )
    .unwrap();
    assert_eq!(spec.rules[0], FieldRule::new("q_deg", "q").scaled(0.5));
    assert_eq!(spec.rules[1], FieldRule::new("pose", "pose").reshaped(vec![2, 2]));

    let mut tr = Translator::new();
    tr.register_rules(spec).unwrap();
    let f = tr.translate(&raw("native/arm", r#"{"q_deg":[10,20],"pose":[[1,2],[3,4]],"extra":"x"}"#)).unwrap();
    assert_eq!(f.topic.as_str(), "state/arm");
    assert_eq!((f.source_id.as_str(), f.seq, f.t_ns), ("dev", 7, 123));
    assert_eq!(f.fields["q"].as_f32().unwrap(), &[5.0, 10.0]);
    assert_eq!(f.fields["pose"].shape(), &[2, 2]);
    assert_eq!(f.fields["pose"].as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn bad_payloads_and_specs_are_reported() {
    let mut tr = Translator::new();
    let spec = AdapterSpec {
        native_schema_id: "s".into(),
        input_topic: topic("native/s"),
        output_topic: topic("s"),
        rules: vec![FieldRule::new("v", "v").reshaped(vec![3])],
    };
    tr.register_rules(spec.clone()).unwrap();
    for bad in [r#"{"v":[1,2]}"#, r#"{"w":1}"#, r#"{"v":"one"}"#, "[1]", "not json"] {
        assert!(matches!(tr.translate(&raw("native/s", bad)), Err(TranslateError::MalformedPayload(_))), "{bad}");
    }
    assert!(matches!(tr.translate(&raw("native/t", "{}")), Err(TranslateError::NoAdapter(_))));
    assert!(matches!(tr.register_rules(spec.clone()), Err(TranslateError::DuplicateSchema(_))));
    let other = AdapterSpec { native_schema_id: "s2".into(), ..spec.clone() };
    assert!(matches!(tr.register_rules(other), Err(TranslateError::DuplicateTopic(..))));
    let twice = AdapterSpec {
        native_schema_id: "s3".into(),
        input_topic: topic("native/u"),
        rules: vec![FieldRule::new("a", "x"), FieldRule::new("b", "x")],
        ..spec
    };
    assert!(matches!(Translator::new().register_rules(twice), Err(TranslateError::InvalidSpec(_))));
}

/// Every native frame a session publishes comes out once on its unified
/// topic, with source, sequence number and timestamp untouched.
#[test]
fn session_streams_translate_one_to_one() {
    let mut cfg = SessionConfig::new(TaskSpec::builtin(TaskKind::PickPlace), 2);
    cfg.grid = true;
    cfg.max_duration_ns = Some(2_000_000_000);
    let bus = Bus::new();
    let topics = cfg.topics();
    let native = bus.subscribe(&topics.native_pattern).unwrap();
    let unified: Vec<_> = ["state/*", "cmd/*", "obs/*"].iter().map(|p| bus.subscribe(p).unwrap()).collect();
    let mut runner = TranslationRunner::new(Arc::new(cfg.translator().unwrap()), bus.clone(), &topics.native_pattern).unwrap();
    run_session(cfg, &bus).unwrap();
    bus.publish(&topic("native/other/device"), "stray", 0, b"{}".to_vec()).unwrap();
    runner.pump().unwrap();

    let natives = native.drain_now();
    let per_topic: Vec<Vec<RawMessage>> = unified.iter().map(|s| s.drain_now()).collect();
    let frames: Vec<&RawMessage> = per_topic.iter().flatten().collect();
    let stats = runner.stats();
    assert_eq!(stats.untranslated, 1);
    assert_eq!(stats.malformed, 0);
    assert_eq!(stats.translated as usize, natives.len() - 1);
    assert_eq!(frames.len(), natives.len() - 1);

    let mut expected: Vec<(String, String, u64, i64)> = natives
        .iter()
        .filter(|m| m.source_id != "stray")
        .map(|m| (m.topic.as_str().trim_start_matches("native/").to_string(), m.source_id.clone(), m.seq, m.t_ns))
        .collect();
    let mut got: Vec<(String, String, u64, i64)> = frames
        .iter()
        .map(|m| {
            let f = decode_json(&m.payload).unwrap();
            assert_eq!((&f.topic, &f.source_id, f.seq, f.t_ns), (&m.topic, &m.source_id, m.seq, m.t_ns));
            (f.topic.to_string(), f.source_id, f.seq, f.t_ns)
        })
        .collect();
    expected.sort();
    got.sort();
    assert_eq!(got, expected);
    let keys = |i: usize| decode_json(&per_topic[i][0].payload).unwrap().fields;
    assert_eq!(keys(0)["eef_pose"].shape(), &[3]);
    assert_eq!(keys(1)["delta_xy"].shape(), &[2]);
    assert_eq!(keys(2)["grid"].shape(), &[8, 8, 3]);
}

proptest! {
    #[test]
    fn rule_scaling_matches_f32_arithmetic(
        values in prop::collection::vec(-1e4f64..1e4, 1..16),
        scale in -100f32..100.0,
    ) {
        let mut tr = Translator::new();
        tr.register_rules(AdapterSpec {
            native_schema_id: "p".into(),
            input_topic: topic("native/p"),
            output_topic: topic("p"),
            rules: vec![FieldRule::new("v", "v").scaled(scale)],
        }).unwrap();
        let payload = serde_json::json!({ "v": values }).to_string();
        let f = tr.translate(&raw("native/p", &payload)).unwrap();
        let expected: Vec<f32> = values.iter().map(|&x| x as f32 * scale).collect();
        prop_assert_eq!(f.fields["v"].as_f32().unwrap(), expected.as_slice());
        prop_assert_eq!(decode_json(&encode_json(&f).unwrap()).unwrap(), f);
    }
}
