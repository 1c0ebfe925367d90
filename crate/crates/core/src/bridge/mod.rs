//! The model bridge: policies served over TCP with the `coin.bridge.v1`
//! protocol, and a client that plugs a remote server into evalkit.
//!
//! Every message is one length-prefixed frame (see [`crate::wire`]) holding a
//! JSON object whose first key is `type`. A session is `hello` /
//! `hello_ack`, then any number of `infer` / `action` round trips, then
//! `bye`. The byte-level reference is `docs/protocol.md`.

mod client;
mod golden;
mod message;
mod server;

use thiserror::Error;

use crate::wire::FrameError;

pub use client::{default_addr, RemotePolicy, ADDR_ENV, DEFAULT_ADDR, DEFAULT_TIMEOUT};
pub use golden::golden_frames;
pub use message::{FieldSpec, Hello, Message, PROTOCOL};
pub use server::{serve_builtin, BridgeServer};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot connect: {0}")]
    Connect(std::io::Error),
    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),
    #[error("no reply within the timeout")]
    Timeout,
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("connection closed")]
    Closed,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(std::io::Error),
}

impl From<FrameError> for BridgeError {
    fn from(e: FrameError) -> Self {
        if e.is_timeout() {
            return BridgeError::Timeout;
        }
        match e {
            FrameError::TooLarge(n) => BridgeError::FrameTooLarge(n),
            FrameError::Closed | FrameError::Truncated { .. } => BridgeError::Closed,
            FrameError::Io(e) => BridgeError::Io(e),
        }
    }
}
