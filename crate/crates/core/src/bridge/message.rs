use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::PolicyCheckpoint;
use crate::translate::Fields;
use crate::wire;

use super::BridgeError;

pub const PROTOCOL: &str = "coin.bridge.v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// What a client expects from the policy it talks to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol: String,
    pub obs_fields: BTreeMap<String, FieldSpec>,
    pub action_dim: usize,
    #[serde(rename = "T_o")]
    pub t_o: usize,
    #[serde(rename = "T_p")]
    pub t_p: usize,
    #[serde(rename = "T_a")]
    pub t_a: usize,
}

impl Hello {
    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Hello {
        let obs_fields = ckpt
            .obs_layout
            .0
            .iter()
            .map(|f| (f.name.clone(), FieldSpec { dtype: "f32".into(), shape: f.shape.clone() }))
            .collect();
        Hello {
            protocol: PROTOCOL.into(),
            obs_fields,
            action_dim: ckpt.action_dim(),
            t_o: ckpt.chunk.t_o,
            t_p: ckpt.chunk.t_p,
            t_a: ckpt.chunk.t_a,
        }
    }

    /// Why `self` cannot be served by a server whose own spec is `served`.
    pub fn mismatch(&self, served: &Hello) -> Option<String> {
        if self.protocol != PROTOCOL {
            return Some(format!("unsupported protocol {:?}, this server speaks {PROTOCOL}", self.protocol));
        }
        if self.action_dim != served.action_dim {
            return Some(format!("action_dim {} != {}", self.action_dim, served.action_dim));
        }
        if (self.t_o, self.t_p, self.t_a) != (served.t_o, served.t_p, served.t_a) {
            return Some(format!(
                "chunk T_o/T_p/T_a {}/{}/{} != {}/{}/{}",
                self.t_o, self.t_p, self.t_a, served.t_o, served.t_p, served.t_a
            ));
        }
        if self.obs_fields != served.obs_fields {
            return Some(format!(
                "obs_fields {:?} != {:?}",
                self.obs_fields.keys().collect::<Vec<_>>(),
                served.obs_fields.keys().collect::<Vec<_>>()
            ));
        }
        None
    }
}

/// One protocol message. The `type` key is always serialized first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    HelloAck {
        accept: bool,
        reason: String,
    },
    Infer {
        /// `T_o` frames, oldest first.
        obs: Vec<Fields>,
        seed: u64,
    },
    Action {
        chunk: Vec<Vec<f32>>,
    },
    Error {
        reason: String,
    },
    Bye,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::HelloAck { .. } => "hello_ack",
            Message::Infer { .. } => "infer",
            Message::Action { .. } => "action",
            Message::Error { .. } => "error",
            Message::Bye => "bye",
        }
    }

    pub fn to_body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bridge messages always serialize")
    }

    pub fn from_body(body: &[u8]) -> Result<Message, BridgeError> {
        serde_json::from_slice(body).map_err(|e| BridgeError::Protocol(format!("bad message: {e}")))
    }

    /// The complete frame: length prefix and body.
    pub fn encode(&self) -> Result<Vec<u8>, BridgeError> {
        Ok(wire::encode_frame(&self.to_body())?)
    }

    /// Decode exactly one frame; trailing bytes are an error.
    pub fn decode(frame: &[u8]) -> Result<Message, BridgeError> {
        let (body, rest) = wire::decode_frame(frame)?;
        if !rest.is_empty() {
            return Err(BridgeError::Protocol(format!("{} bytes after the frame", rest.len())));
        }
        Message::from_body(body)
    }
}
