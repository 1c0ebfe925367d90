use std::collections::BTreeMap;

use crate::translate::{FieldValue, Fields};

use super::message::{FieldSpec, Hello, Message, PROTOCOL};

fn frame(fields: &[(&str, Vec<f32>)]) -> Fields {
    fields.iter().map(|(k, v)| (k.to_string(), FieldValue::vector(v.clone()))).collect()
}

/// The reference messages and their exact frames, one per message type
/// plus a rejecting `hello_ack`. `docs/protocol.md` lists the same bytes.
pub fn golden_frames() -> Vec<(&'static str, Message, Vec<u8>)> {
    let obs_fields: BTreeMap<String, FieldSpec> = [
        ("eef_pose".to_string(), FieldSpec { dtype: "f32".into(), shape: vec![3] }),
        ("scene".to_string(), FieldSpec { dtype: "f32".into(), shape: vec![4] }),
    ]
    .into();
    let messages = vec![
        (
            "hello",
            Message::Hello(Hello { protocol: PROTOCOL.into(), obs_fields, action_dim: 3, t_o: 2, t_p: 16, t_a: 8 }),
        ),
        ("hello_ack", Message::HelloAck { accept: true, reason: String::new() }),
        ("hello_ack_reject", Message::HelloAck { accept: false, reason: "action_dim 2 != 3".into() }),
        (
            "infer",
            Message::Infer {
                obs: vec![
                    frame(&[("eef_pose", vec![0.5, 0.25, 1.0]), ("scene", vec![0.0, 0.5, -0.5, 1.0])]),
                    frame(&[("eef_pose", vec![0.5, 0.375, 1.0]), ("scene", vec![0.0, 0.5, -0.5, 1.0])]),
                ],
                seed: 7,
            },
        ),
        ("action", Message::Action { chunk: vec![vec![0.0, 0.125, 1.0], vec![-0.5, 0.0625, -1.0]] }),
        ("error", Message::Error { reason: "busy".into() }),
        ("bye", Message::Bye),
    ];
    messages
        .into_iter()
        .map(|(name, m)| {
            let bytes = m.encode().expect("golden messages are small");
            (name, m, bytes)
        })
        .collect()
}
